"""Rating service: sessions, durable submissions, export, HTTP surface."""

import json

import pytest

import iqalab.service as service_mod
from iqalab.errors import (
    ConfigError,
    MissingFileError,
    RangeError,
    SessionError,
)
from iqalab.mos import RatingTable
from iqalab.rng import RngStream
from iqalab.raster import save_image
from iqalab.service import (
    ACR_LABEL_SCORES,
    HISTORY_WINDOW,
    SCHEMA_VERSION,
    RatingService,
    build_app,
)
from iqalab.synth import make_source_images


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("rating-imgs")
    for i, img in enumerate(make_source_images(6, 16, RngStream(55))):
        save_image(img, root / f"pic_{i}.png")
    return root


@pytest.fixture()
def svc(tmp_path, image_dir):
    service = RatingService(tmp_path / "state")
    service.register_image_set("train", image_dir)
    return service


def rate_all(service, session_id, score=0.5):
    acks = []
    while True:
        try:
            item = service.next_item(session_id)
        except SessionError:
            return acks
        acks.append(service.submit_rating(session_id, item["image_id"],
                                          score=score, timestamp=float(len(acks))))


class TestSessions:
    def test_create_view_fields(self, svc):
        view = svc.create_session("alice", "train", shuffle_seed=7)
        assert view["schema_version"] == SCHEMA_VERSION
        assert view["status"] == "active"
        assert view["total"] == 6 and view["cursor"] == 0

    def test_unknown_set(self, svc):
        with pytest.raises(MissingFileError):
            svc.create_session("alice", "nope")

    def test_empty_observer(self, svc):
        with pytest.raises(ConfigError):
            svc.create_session("", "train")

    def test_recreate_same_queue(self, svc):
        a = svc.create_session("alice", "train", shuffle_seed=7)
        b = svc.create_session("alice", "train", shuffle_seed=7)
        assert svc.sessions[a["session_id"]].queue == \
            svc.sessions[b["session_id"]].queue

    def test_observer_changes_shuffle(self, svc):
        a = svc.create_session("alice", "train", shuffle_seed=7)
        b = svc.create_session("bob", "train", shuffle_seed=7)
        qa = svc.sessions[a["session_id"]].queue
        qb = svc.sessions[b["session_id"]].queue
        assert sorted(qa) == sorted(qb)
        assert qa != qb

    def test_queue_is_permutation_of_set(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        assert sorted(svc.sessions[sid].queue) == sorted(svc.image_sets["train"])


class TestNextItem:
    def test_fresh_session(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        item = svc.next_item(sid)
        assert item["image_id"] == svc.sessions[sid].queue[0]
        assert item["index"] == 0 and item["total"] == 6
        assert item["history"] == []

    def test_history_in_submission_order(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        for k, score in enumerate([0.2, 0.9, 0.4]):
            item = svc.next_item(sid)
            svc.submit_rating(sid, item["image_id"], score=score,
                              timestamp=float(k))
        assert svc.next_item(sid)["history"] == [0.2, 0.9, 0.4]

    def test_history_window_trims_to_k(self, tmp_path, tmp_path_factory):
        root = tmp_path_factory.mktemp("many-imgs")
        for i, img in enumerate(make_source_images(HISTORY_WINDOW + 3, 16,
                                                   RngStream(77))):
            save_image(img, root / f"many_{i:02d}.png")
        service = RatingService(tmp_path / "state")
        service.register_image_set("big", root)
        sid = service.create_session("carol", "big")["session_id"]
        scores = [(i % 11) / 10 for i in range(HISTORY_WINDOW + 2)]
        for k, score in enumerate(scores):
            item = service.next_item(sid)
            service.submit_rating(sid, item["image_id"], score=score,
                                  timestamp=float(k))
        history = service.next_item(sid)["history"]
        assert len(history) == HISTORY_WINDOW
        assert history == scores[-HISTORY_WINDOW:]

    def test_completion_then_error(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        acks = rate_all(svc, sid)
        assert len(acks) == 6
        assert acks[-1]["status"] == "completed"
        with pytest.raises(SessionError):
            svc.next_item(sid)

    def test_unknown_session(self, svc):
        with pytest.raises(MissingFileError):
            svc.next_item("s-999999")


class TestSubmitRating:
    def test_ack_advances_cursor(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        item = svc.next_item(sid)
        ack = svc.submit_rating(sid, item["image_id"], score=0.73, timestamp=1.0)
        assert ack["score"] == 0.73 and ack["rated"] == 1
        assert svc.next_item(sid)["index"] == 1

    def test_discrete_label_maps_to_score(self, svc):
        assert ACR_LABEL_SCORES == {1: 0.0, 2: 0.25, 3: 0.5, 4: 0.75, 5: 1.0}
        sid = svc.create_session("alice", "train")["session_id"]
        item = svc.next_item(sid)
        ack = svc.submit_rating(sid, item["image_id"], label=4, timestamp=1.0)
        assert ack["score"] == 0.75

    def test_label_score_disagreement(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        item = svc.next_item(sid)
        with pytest.raises(RangeError):
            svc.submit_rating(sid, item["image_id"], score=0.5, label=4)

    def test_bad_label_and_score(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        image = svc.next_item(sid)["image_id"]
        with pytest.raises(RangeError):
            svc.submit_rating(sid, image, label=7)
        with pytest.raises(RangeError):
            svc.submit_rating(sid, image, score=1.2)
        with pytest.raises(RangeError):
            svc.submit_rating(sid, image)

    def test_out_of_order_image(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        queue = svc.sessions[sid].queue
        with pytest.raises(SessionError):
            svc.submit_rating(sid, queue[2], score=0.5)

    def test_observer_cannot_rate_twice_across_sessions(self, svc):
        sid1 = svc.create_session("alice", "train", shuffle_seed=1)["session_id"]
        first = svc.next_item(sid1)["image_id"]
        svc.submit_rating(sid1, first, score=0.5, timestamp=1.0)
        sid2 = svc.create_session("alice", "train", shuffle_seed=1)["session_id"]
        with pytest.raises(SessionError):
            svc.submit_rating(sid2, first, score=0.9, timestamp=2.0)

    def test_inactive_session_rejected(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        svc.withdraw(sid)
        with pytest.raises(SessionError):
            svc.submit_rating(sid, svc.sessions[sid].queue[0], score=0.5)


class TestWithdraw:
    def test_partial_ratings_survive(self, svc, tmp_path):
        sid = svc.create_session("alice", "train")["session_id"]
        for k in range(2):
            item = svc.next_item(sid)
            svc.submit_rating(sid, item["image_id"], score=0.4, timestamp=float(k))
        view = svc.withdraw(sid)
        assert view["status"] == "withdrawn"
        table = svc.ratings_for_set("train")
        assert len(table) == 2

    def test_double_withdraw_rejected(self, svc):
        sid = svc.create_session("alice", "train")["session_id"]
        svc.withdraw(sid)
        with pytest.raises(SessionError):
            svc.withdraw(sid)


class TestExport:
    def test_row_count_two_full_sessions(self, svc, tmp_path):
        for observer in ("alice", "bob"):
            sid = svc.create_session(observer, "train")["session_id"]
            rate_all(svc, sid, score=0.5)
        path = svc.export_csv("train", tmp_path / "out.csv")
        table = RatingTable.read_csv(path)
        assert len(table) == 12
        assert table.observer_ids == ["alice", "bob"]

    def test_empty_set_header_only(self, svc, tmp_path):
        path = svc.export_csv("train", tmp_path / "out.csv")
        assert path.read_text().strip() == "image_id,observer_id,score,timestamp"

    def test_export_feeds_aggregation_schema(self, svc, tmp_path):
        sid = svc.create_session("alice", "train")["session_id"]
        rate_all(svc, sid, score=0.25)
        table = RatingTable.read_csv(svc.export_csv("train", tmp_path / "r.csv"))
        assert {r.score for r in table.ratings} == {0.25}


class TestDurability:
    def test_restart_replays_acknowledged_events(self, tmp_path, image_dir):
        state = tmp_path / "state"
        service = RatingService(state)
        service.register_image_set("train", image_dir)
        sid = service.create_session("alice", "train")["session_id"]
        scores = [0.1, 0.2, 0.3]
        for k, score in enumerate(scores):
            item = service.next_item(sid)
            service.submit_rating(sid, item["image_id"], score=score,
                                  timestamp=float(k))
        service.withdraw(sid)

        reborn = RatingService(state)
        reborn.register_image_set("train", image_dir)
        session = reborn.sessions[sid]
        assert session.status == "withdrawn"
        assert session.cursor == 3
        assert session.history == scores
        assert len(reborn.ratings_for_set("train")) == 3

    def test_snapshot_plus_tail_replay(self, tmp_path, image_dir, monkeypatch):
        monkeypatch.setattr(service_mod, "SNAPSHOT_EVERY", 3)
        state = tmp_path / "state"
        service = RatingService(state)
        service.register_image_set("train", image_dir)
        sid = service.create_session("alice", "train")["session_id"]
        for k in range(4):  # 5 events total: snapshot lands mid-stream
            item = service.next_item(sid)
            service.submit_rating(sid, item["image_id"], score=0.2,
                                  timestamp=float(k))
        assert (state / "snapshot.json").exists()
        snap = json.loads((state / "snapshot.json").read_text())
        assert snap["events_applied"] == 3

        reborn = RatingService(state)
        assert reborn.sessions[sid].cursor == 4
        assert len([r for r in reborn.ratings.values()]) == 4

    def test_session_counter_survives_restart(self, tmp_path, image_dir):
        state = tmp_path / "state"
        service = RatingService(state)
        service.register_image_set("train", image_dir)
        first = service.create_session("alice", "train")["session_id"]
        reborn = RatingService(state)
        reborn.register_image_set("train", image_dir)
        second = reborn.create_session("bob", "train")["session_id"]
        assert second != first


class TestHttpSurface:
    @pytest.fixture()
    def client(self, svc):
        from fastapi.testclient import TestClient

        return TestClient(build_app(svc))

    def test_full_round_trip(self, client, svc, image_dir):
        created = client.post("/sessions", json={
            "observer_id": "alice", "image_set": "train", "shuffle_seed": 3})
        assert created.status_code == 200
        sid = created.json()["session_id"]
        assert created.json()["schema_version"] == SCHEMA_VERSION

        item = client.get(f"/sessions/{sid}/next").json()
        assert item["history"] == []

        img = client.get(f"/images/{item['image_id']}")
        assert img.status_code == 200
        on_disk = (image_dir / f"{item['image_id']}.png").read_bytes()
        assert img.content == on_disk  # served verbatim, no transformation

        ack = client.post(f"/sessions/{sid}/ratings", json={
            "image_id": item["image_id"], "label": 4, "timestamp": 1.0})
        assert ack.status_code == 200
        assert ack.json()["score"] == 0.75

        export = client.get("/export/train.csv")
        assert export.status_code == 200
        lines = export.text.strip().splitlines()
        assert lines[0] == "image_id,observer_id,score,timestamp"
        assert len(lines) == 2 and ",alice,0.75," in lines[1]

    def test_http_error_codes(self, client, svc):
        assert client.get("/sessions/s-999999/next").status_code == 404
        assert client.get("/images/nope").status_code == 404
        assert client.get("/export/nope.csv").status_code == 404

        sid = client.post("/sessions", json={
            "observer_id": "dana", "image_set": "train"}).json()["session_id"]
        item = client.get(f"/sessions/{sid}/next").json()
        bad_label = client.post(f"/sessions/{sid}/ratings", json={
            "image_id": item["image_id"], "label": 9})
        assert bad_label.status_code == 422

        client.post(f"/sessions/{sid}/ratings", json={
            "image_id": item["image_id"], "score": 0.5, "timestamp": 1.0})
        duplicate = client.post(f"/sessions/{sid}/ratings", json={
            "image_id": item["image_id"], "score": 0.5, "timestamp": 2.0})
        assert duplicate.status_code == 409

        client.post(f"/sessions/{sid}/withdraw")
        inactive = client.get(f"/sessions/{sid}/next")
        assert inactive.status_code == 409
