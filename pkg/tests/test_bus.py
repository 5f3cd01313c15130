import queue
import threading

import pytest

from agentloop.bus import TopicBus, TopicError, topic_matches, validate_pattern, validate_topic


def test_publish_reaches_matching_subscriber():
    bus = TopicBus()
    sub = bus.subscribe("/session/s1/steps")
    delivered = bus.publish("/session/s1/steps", {"n": 1})
    assert delivered == 1
    assert sub.get(timeout=1) == ("/session/s1/steps", {"n": 1})


def test_single_segment_wildcard():
    bus = TopicBus()
    sub = bus.subscribe("/session/+/steps")
    bus.publish("/session/s1/steps", 1)
    bus.publish("/session/s2/steps", 2)
    bus.publish("/session/s1/world", 3)  # different leaf, no match
    got = [sub.get(timeout=1) for _ in range(2)]
    assert got == [("/session/s1/steps", 1), ("/session/s2/steps", 2)]
    with pytest.raises(queue.Empty):
        sub.get(timeout=0.05)


def test_trailing_hash_wildcard_matches_subtree():
    bus = TopicBus()
    sub = bus.subscribe("/session/#")
    bus.publish("/session/s1/steps", 1)
    bus.publish("/session/s1/world", 2)
    bus.publish("/gateway/tools", 3)
    got = {sub.get(timeout=1)[0] for _ in range(2)}
    assert got == {"/session/s1/steps", "/session/s1/world"}


def test_publish_with_zero_subscribers_is_dropped():
    bus = TopicBus()
    assert bus.publish("/session/s1/steps", {"x": 1}) == 0
    sub = bus.subscribe("/session/#")
    with pytest.raises(queue.Empty):
        sub.get(timeout=0.05)  # no persistence: late subscriber missed it


def test_per_topic_fifo_order_per_publisher():
    bus = TopicBus()
    sub = bus.subscribe("/t/a")
    for i in range(100):
        bus.publish("/t/a", i)
    got = [sub.get(timeout=1)[1] for _ in range(100)]
    assert got == list(range(100))


def test_callback_subscription_delivers_synchronously():
    bus = TopicBus()
    seen = []
    bus.subscribe("/t/#", callback=lambda topic, payload: seen.append((topic, payload)))
    bus.publish("/t/x", 1)
    assert seen == [("/t/x", 1)]


def test_unsubscribe_stops_delivery():
    bus = TopicBus()
    sub = bus.subscribe("/t/a")
    sub.close()
    bus.publish("/t/a", 1)
    with pytest.raises(queue.Empty):
        sub.get(timeout=0.05)


@pytest.mark.parametrize("bad", ["", "nope", "/", "/UPPER/case", "/tr ailing", "/a//b", "/a/b-c"])
def test_invalid_topic_names_rejected(bad):
    with pytest.raises(TopicError):
        validate_topic(bad)


def test_invalid_patterns_rejected():
    with pytest.raises(TopicError):
        validate_pattern("/a/#/b")  # '#' not final
    with pytest.raises(TopicError):
        validate_pattern("bare")


def test_match_semantics():
    assert topic_matches(["a", "+", "c"], ["a", "b", "c"])
    assert not topic_matches(["a", "+", "c"], ["a", "b", "d"])
    assert topic_matches(["a", "#"], ["a", "b", "c", "d"])
    assert not topic_matches(["a", "b"], ["a", "b", "c"])
    assert not topic_matches(["a", "b", "c"], ["a", "b"])


def test_concurrent_publishers_keep_source_order():
    bus = TopicBus()
    sub = bus.subscribe("/t/#")
    n = 200

    def publish(worker):
        for i in range(n):
            bus.publish(f"/t/w{worker}", (worker, i))

    threads = [threading.Thread(target=publish, args=(w,)) for w in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    per_worker = {w: [] for w in range(4)}
    for _ in range(4 * n):
        _, (worker, i) = sub.get(timeout=1)
        per_worker[worker].append(i)
    for seq in per_worker.values():
        assert seq == list(range(n))  # FIFO per publisher survives interleaving
