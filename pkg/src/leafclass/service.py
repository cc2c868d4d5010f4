"""HTTP service for the human review queue.

Serves queue state as JSON, accepts resolutions, and hosts the static review
UI bundle when one has been built. The service holds the store's writer lock
for its lifetime; batch tools refuse to write while it runs.
"""
from __future__ import annotations

import json
import mimetypes
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .queue_store import (
    REJECTED_ALL,
    STATUS_PENDING,
    AlreadyResolvedError,
    ReviewItem,
    ReviewQueueStore,
    UnknownItemError,
)


def item_summary(item: ReviewItem) -> dict:
    return {
        "item_id": item.item_id,
        "image_id": item.image_id,
        "status": item.status,
        "top_candidate": {
            "class_id": item.top3[0][0],
            "class_name": item.top3[0][1],
            "probability": item.top3[0][2],
        } if item.top3 else None,
    }


def item_detail(item: ReviewItem) -> dict:
    obj = item.to_json()
    obj["image_url"] = f"/images/{item.image_id}"
    obj["candidates"] = [
        {"class_id": c, "class_name": n, "probability": p} for c, n, p in item.top3
    ]
    return obj


def create_app(store: ReviewQueueStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="review queue")
    # One mutation at a time regardless of how many handler threads run.
    write_lock = threading.Lock()

    @app.get("/api/queue")
    def get_queue(status: str = STATUS_PENDING, limit: int = 50):
        items = [i for i in store.state.items.values() if i.status == status]
        if limit >= 0:
            items = items[:limit]
        return {"items": [item_summary(i) for i in items], "status": status}

    @app.get("/api/items/{item_id}")
    def get_item(item_id: str):
        item = store.get(item_id)
        if item is None:
            return JSONResponse({"error": f"no review item {item_id!r}"}, status_code=404)
        return item_detail(item)

    @app.post("/api/items/{item_id}/resolution")
    async def post_resolution(item_id: str, request: Request):
        # Parse by hand: a malformed body is the client's 400, not a 422.
        try:
            body = json.loads(await request.body())
        except json.JSONDecodeError:
            return JSONResponse({"error": "body is not valid JSON"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be a JSON object"}, status_code=400)
        choice = body.get("chosen_class_id")
        reviewer = body.get("reviewer")
        if not isinstance(reviewer, str) or not reviewer:
            return JSONResponse({"error": "missing reviewer"}, status_code=400)
        if choice != REJECTED_ALL and not isinstance(choice, int):
            return JSONResponse(
                {"error": 'chosen_class_id must be an integer or "rejected_all"'},
                status_code=400)
        item = store.get(item_id)
        if item is None:
            return JSONResponse({"error": f"no review item {item_id!r}"}, status_code=404)
        if choice != REJECTED_ALL and choice not in [c for c, _, _ in item.top3]:
            return JSONResponse(
                {"error": f"chosen_class_id {choice} is not among the candidates"},
                status_code=400)
        with write_lock:
            try:
                resolved = store.resolve(item_id, choice, reviewer)
            except AlreadyResolvedError:
                return JSONResponse({"error": f"item {item_id!r} already resolved"},
                                    status_code=409)
            except UnknownItemError:
                return JSONResponse({"error": f"no review item {item_id!r}"},
                                    status_code=404)
        return item_detail(resolved)

    @app.get("/api/stats")
    def get_stats():
        return store.stats()

    @app.get("/images/{image_id}")
    def get_image(image_id: str):
        item = store.get(image_id)
        if item is None:
            return JSONResponse({"error": f"no image {image_id!r}"}, status_code=404)
        path = Path(item.image_path)
        if not path.is_absolute():
            path = store.root / path
        if not path.exists():
            return JSONResponse({"error": f"image file missing for {image_id!r}"},
                                status_code=404)
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        return FileResponse(path, media_type=media_type)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:
        @app.get("/")
        def index() -> Response:
            return Response(
                "review UI bundle not built; the JSON API under /api is live\n",
                media_type="text/plain")

    return app


def serve(store_root: str | Path, host: str, port: int,
          static_dir: str | Path | None = None) -> None:
    """Run until interrupted. Takes the store writer lock for the duration."""
    import uvicorn

    store = ReviewQueueStore(store_root, take_lock=True)
    try:
        app = create_app(store, static_dir=static_dir)
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        store.release_lock()
