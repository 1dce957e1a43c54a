"""HTTP inference service: the server half of the deployment story.

Clients upload a trained container once, then POST framed measurement
packets; the service decodes, zero-pads, and predicts with the single model
or the per-dims finetuned entry. Long-running work (training, simulation)
stays in the CLI; this surface is for many lightweight prediction clients.
"""

import hashlib
import tempfile

from fastapi import FastAPI, HTTPException, Request

from .container import load_container
from .errors import FormatError, PacketError
from .flops import count_flops
from .protocol import decode_packet
from .remote import PredictionServer
from .schemas import FlopResponse, HealthResponse, ModelInfo, ModelList, PredictResponse


class ModelRegistry:
    def __init__(self):
        self.entries = {}

    def add(self, loaded):
        digest = hashlib.sha256()
        for name, arr in sorted(loaded.model.parameters().items()):
            digest.update(name.encode())
            digest.update(arr.tobytes())
        model_id = digest.hexdigest()[:12]
        table = None
        if loaded.table is not None:
            table = {dims: entry for dims, entry in loaded.table.items()}
        self.entries[model_id] = (loaded, PredictionServer(loaded.model, table))
        return model_id

    def get(self, model_id):
        if model_id not in self.entries:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id}")
        return self.entries[model_id]


def _info(model_id, loaded):
    model = loaded.model
    return ModelInfo(
        model_id=model_id,
        kind=loaded.kind,
        class_count=model.class_count,
        input_shape=list(model.input_shape),
        measurement_shape=list(model.measurement_shape),
        mask_min=list(model.mask_spec.min_dims) if model.mask_spec else None,
        mask_max=list(model.mask_spec.max_dims) if model.mask_spec else None,
        training_mode=model.training_mode,
        table_dims=[list(d) for d in sorted(loaded.table)] if loaded.table else None,
    )


def create_app(model_paths=()):
    app = FastAPI(title="mclearn inference service", version="1")
    registry = ModelRegistry()
    for path in model_paths:
        registry.add(load_container(path))
    app.state.registry = registry

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", models_loaded=len(registry.entries))

    @app.get("/models", response_model=ModelList)
    def list_models():
        return ModelList(models=[_info(mid, loaded)
                                 for mid, (loaded, _) in sorted(registry.entries.items())])

    @app.post("/models", response_model=ModelInfo, status_code=201)
    async def upload_model(request: Request):
        raw = await request.body()
        with tempfile.NamedTemporaryFile(suffix=".mcl") as tmp:
            tmp.write(raw)
            tmp.flush()
            try:
                loaded = load_container(tmp.name)
            except FormatError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
        model_id = registry.add(loaded)
        return _info(model_id, loaded)

    @app.get("/models/{model_id}", response_model=ModelInfo)
    def model_info(model_id: str):
        loaded, _ = registry.get(model_id)
        return _info(model_id, loaded)

    @app.post("/models/{model_id}/predict", response_model=PredictResponse)
    async def predict_packet(model_id: str, request: Request):
        loaded, server = registry.get(model_id)
        raw = await request.body()
        try:
            z_bar, sample_id = decode_packet(raw)
            label, probs = server.predict_measurement(z_bar)
        except PacketError as exc:
            raise HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}") from exc
        return PredictResponse(model_id=model_id, sample_id=sample_id,
                               dims=list(z_bar.shape), label=label,
                               probabilities=[float(p) for p in probs])

    @app.get("/models/{model_id}/flops", response_model=FlopResponse)
    def model_flops(model_id: str):
        loaded, _ = registry.get(model_id)
        model = loaded.model
        rep = count_flops(model.input_shape, model.measurement_shape, model.network.specs)
        return FlopResponse(model_id=model_id, mcs_flops=rep.mcs_flops,
                            fs_flops=rep.fs_flops, tasknet_flops=rep.tasknet_flops,
                            vector_sense_flops=rep.vector_sense_flops, ratio=rep.ratio)

    return app
