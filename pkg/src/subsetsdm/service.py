"""Read-only HTTP interface over a loaded checkpoint + dataset.

All endpoints share one immutable session (model, dataset, split); nothing
mutates after startup, so requests are order-independent and every numeric in
a response equals the corresponding library call.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .data import MISSING, Dataset, SchemaError, Sample, SplitAssignment
from .evaluation import mean_auc
from .masks import SubsetMask
from .model import Model
from .shapley import (
    TooManyPlayers,
    exact_shapley,
    performance_value_function,
    prediction_value_function,
    stratified_mc_shapley,
    uniform_mc_shapley,
)

MAX_EXACT_GROUPED_PLAYERS = 12


class EvalRequest(BaseModel):
    mask: str
    include_per_species: bool = False
    split: str = "test"


class PredictRequest(BaseModel):
    mask: str
    species: list[str]
    sample_ids: list[str] | None = None
    raw_values: list[dict] | None = None


class ShapleyRequest(BaseModel):
    target: str  # performance | prediction
    groups: bool = True
    sample_id: str | None = None
    species: str | None = None
    estimator: str = "exact"
    n_squares: int = 10
    n_samples: int = 50
    seed: int = 0
    split: str = "test"


def _parse_mask(model: Model, spec: str) -> SubsetMask:
    try:
        return SubsetMask.parse(model.schema, spec)
    except (SchemaError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from None


def build_session(model: Model, dataset: Dataset, split: SplitAssignment,
                  max_evaluations: int = 50_000) -> FastAPI:
    app = FastAPI(title="subsetsdm service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    split_indices = {name: split.indices(dataset, name) for name in ("train", "val", "test")}
    missing_counts = _missing_counts(model, dataset, split_indices)
    sample_by_id = {s.id: s for s in dataset.samples}

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/schema")
    def schema():
        groups = model.schema.groups()
        return {
            "M": model.schema.M,
            "predictors": [
                {
                    "name": p.name,
                    "kind": "scalar" if p.dim == 1 else {"vector": p.dim},
                    "group": p.group,
                    "missing": missing_counts[p.name],
                }
                for p in model.schema.predictors
            ],
            "groups": {g: [model.schema.predictors[i].name for i in idx]
                       for g, idx in groups.items()},
            "species": model.species,
        }

    @app.post("/eval")
    def eval_mask(req: EvalRequest):
        mask = _parse_mask(model, req.mask)
        if req.split not in split_indices:
            raise HTTPException(status_code=400, detail=f"unknown split {req.split!r}")
        try:
            report = mean_auc(model, dataset, split, mask, req.split)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        if report.n_species == 0:
            raise HTTPException(status_code=422, detail="no species with both classes in split")
        out = {"mean_auc": report.mean_auc, "n_species": report.n_species,
               "mask": mask.bits_string()}
        if req.include_per_species:
            out["per_species_auc"] = report.per_species
        return out

    @app.post("/predict")
    def predict(req: PredictRequest):
        mask = _parse_mask(model, req.mask)
        unknown = [s for s in req.species if s not in model.species]
        if unknown:
            raise HTTPException(status_code=404, detail=f"unknown species: {unknown}")
        if (req.sample_ids is None) == (req.raw_values is None):
            raise HTTPException(status_code=400,
                                detail="exactly one of sample_ids or raw_values required")
        if req.sample_ids is not None:
            missing_ids = [i for i in req.sample_ids if i not in sample_by_id]
            if missing_ids:
                raise HTTPException(status_code=400, detail=f"unknown sample ids: {missing_ids}")
            samples = [sample_by_id[i] for i in req.sample_ids]
        else:
            samples = []
            for k, row in enumerate(req.raw_values):
                values = {}
                for p in model.schema.predictors:
                    v = row.get(p.name)
                    values[p.name] = MISSING if v is None else v
                samples.append(Sample(f"raw{k}", 0.0, 0.0, values, frozenset()))
            try:
                Dataset(model.schema, samples, model.species).validate()
            except SchemaError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        scores = model.predict_samples(samples, mask)
        cols = [model.species.index(s) for s in req.species]
        return {
            "mask": mask.bits_string(),
            "species": req.species,
            "scores": [[float(scores[i, c]) for c in cols] for i in range(len(samples))],
        }

    @app.post("/shapley")
    def shapley(req: ShapleyRequest):
        groups = model.schema.groups() if req.groups else None
        n_players = len(groups) if groups else model.schema.M
        if req.target == "performance":
            vf = performance_value_function(model, dataset, split, groups,
                                            split_name=req.split)
        elif req.target == "prediction":
            if not req.species or not req.sample_id:
                raise HTTPException(status_code=400,
                                    detail="prediction target requires species and sample_id")
            if req.species not in model.species:
                raise HTTPException(status_code=404, detail=f"unknown species {req.species!r}")
            sample = sample_by_id.get(req.sample_id)
            if sample is None:
                raise HTTPException(status_code=400, detail=f"unknown sample {req.sample_id!r}")
            vf = prediction_value_function(model, sample, req.species, groups)
        else:
            raise HTTPException(status_code=400, detail=f"unknown target {req.target!r}")

        if req.estimator == "exact":
            if n_players > MAX_EXACT_GROUPED_PLAYERS:
                raise HTTPException(status_code=413,
                                    detail=f"{n_players} players too large for exact; "
                                           "use the stratified estimator")
            cost = 2 ** n_players
        elif req.estimator == "stratified":
            cost = req.n_squares * n_players ** 2 + 1
        elif req.estimator == "uniform":
            cost = 2 * req.n_samples * n_players
        else:
            raise HTTPException(status_code=400, detail=f"unknown estimator {req.estimator!r}")
        if cost > max_evaluations:
            raise HTTPException(status_code=413,
                                detail=f"estimated {cost} evaluations exceeds cap "
                                       f"{max_evaluations}")

        rng = np.random.default_rng(req.seed)
        try:
            if req.estimator == "exact":
                est = exact_shapley(vf)
            elif req.estimator == "stratified":
                est = stratified_mc_shapley(vf, req.n_squares, rng)
            else:
                est = uniform_mc_shapley(vf, req.n_samples, rng)
        except TooManyPlayers as exc:
            raise HTTPException(status_code=413, detail=str(exc)) from None
        return est.to_json()

    return app


def _missing_counts(model: Model, dataset: Dataset, split_indices: dict) -> dict:
    from .data import is_missing

    out = {}
    for p in model.schema.predictors:
        per_split = {}
        for name, idx in split_indices.items():
            per_split[name] = sum(
                1 for i in idx if is_missing(dataset.samples[i].values[p.name]))
        out[p.name] = per_split
    return out
