"""HTTP service around the monitoring loop.

A session owns one :class:`~activespm.monitor.StreamMonitor`. Clients post
observations one at a time; when a step asks for a label the client must
answer (``/label``) or decline (``/decline``) before the next observation.
"""
from __future__ import annotations

import math
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Response

from ..cli import build_version
from ..errors import ActiveSPMError
from ..monitor import StreamMonitor, log_to_csv
from ..phmm import ObservationStream, predict_state, select_model
from . import schemas as S

app = FastAPI(title="activespm", version=build_version())

_sessions: dict[str, tuple[threading.Lock, StreamMonitor]] = {}
_registry_lock = threading.Lock()


def _get(session_id: str):
    with _registry_lock:
        entry = _sessions.get(session_id)
    if entry is None:
        raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
    return entry


def _model_doc(model) -> S.ModelDoc:
    return S.ModelDoc(**model.to_dict())


def _info(sid: str, mon: StreamMonitor) -> S.SessionInfo:
    return S.SessionInfo(session_id=sid, t=mon._n - mon.t_init, stream_length=mon.T,
                         n_states=mon.model.n_states, label_budget=mon.budget_total,
                         remaining_budget=mon.b,
                         pending_label=None if mon.pending is None else mon.pending.t)


def _nan_to_none(x: float):
    return None if math.isnan(x) else float(x)


@app.get("/health", response_model=S.Health)
def health():
    return S.Health(version=build_version())


@app.post("/sessions", response_model=S.SessionInfo, status_code=201)
def create_session(body: S.SessionCreate):
    try:
        cfg = body.monitor.build()
        mon = StreamMonitor(np.asarray(body.init_observations, dtype=float), body.stream_length,
                            cfg, body.seed)
    except (ValueError, ActiveSPMError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    sid = uuid.uuid4().hex
    with _registry_lock:
        _sessions[sid] = (threading.Lock(), mon)
    return _info(sid, mon)


@app.get("/sessions/{session_id}", response_model=S.SessionInfo)
def session_info(session_id: str):
    lock, mon = _get(session_id)
    with lock:
        return _info(session_id, mon)


@app.delete("/sessions/{session_id}", status_code=204)
def delete_session(session_id: str):
    with _registry_lock:
        if _sessions.pop(session_id, None) is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
    return Response(status_code=204)


@app.post("/sessions/{session_id}/observe", response_model=S.StepResponse)
def observe(session_id: str, body: S.Observation):
    lock, mon = _get(session_id)
    with lock:
        try:
            step = mon.observe(body.y)
        except RuntimeError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        except (ValueError, ActiveSPMError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return S.StepResponse(t=step.t - mon.t_init, predicted=step.predicted,
                              posterior=[float(v) for v in step.posterior],
                              label_requested=step.label_requested,
                              label_source=step.label_source, n_states=mon.model.n_states,
                              remaining_budget=mon.b)


@app.post("/sessions/{session_id}/label", response_model=S.LabelResponse)
def supply_label(session_id: str, body: S.LabelBody):
    lock, mon = _get(session_id)
    with lock:
        if mon.pending is None:
            raise HTTPException(status_code=409, detail="no label has been requested")
        t = mon.pending.t - mon.t_init
        try:
            mon.supply_label(body.state)
        except (ValueError, ActiveSPMError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return S.LabelResponse(t=t, state=body.state, n_states=mon.model.n_states,
                               remaining_budget=mon.b)


@app.post("/sessions/{session_id}/decline", response_model=S.SessionInfo)
def decline(session_id: str):
    lock, mon = _get(session_id)
    with lock:
        try:
            mon.decline_label()
        except RuntimeError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        return _info(session_id, mon)


@app.get("/sessions/{session_id}/log", response_model=list[S.DecisionRow])
def decision_log(session_id: str):
    lock, mon = _get(session_id)
    with lock:
        return [S.DecisionRow(t=r.t, predicted=r.predicted, labeled=r.labeled,
                              label_source=r.label_source, true_state_if_labeled=r.true_state,
                              entropy=r.entropy, p_exp=_nan_to_none(r.p_exp), v2=r.v2,
                              p_exr=r.p_exr, B_t=r.B_t, n_states=r.n_states) for r in mon.log]


@app.get("/sessions/{session_id}/log.csv")
def decision_log_csv(session_id: str):
    lock, mon = _get(session_id)
    with lock:
        return Response(content=log_to_csv(mon.log), media_type="text/csv")


@app.get("/sessions/{session_id}/model", response_model=S.ModelDoc)
def current_model(session_id: str):
    lock, mon = _get(session_id)
    with lock:
        return _model_doc(mon.model)


@app.post("/simulate", response_model=S.SimulateResponse)
def simulate(body: S.SimulateRequest):
    from ..bench.scenario import generate_scenario

    scen = body.scenario.build(root_seed=body.seed)
    states, Y = generate_scenario(scen, np.random.SeedSequence([body.seed]))
    return S.SimulateResponse(states=states.tolist(), observations=Y.tolist(), t_init=scen.t_init)


@app.post("/fit", response_model=S.FitResponse)
def fit_model(body: S.FitRequest):
    if body.n_max < body.n_min:
        raise HTTPException(status_code=422, detail="n_max must be >= n_min")
    try:
        stream = ObservationStream(np.asarray(body.observations, dtype=float), body.labels)
        sel = select_model(stream, body.n_min, body.n_max)
    except (ValueError, ActiveSPMError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    predicted = [predict_state(sel.posterior, t)[1] for t in range(1, stream.T + 1)]
    return S.FitResponse(model=_model_doc(sel.model),
                         log_likelihood=sel.posterior.log_likelihood,
                         aic={int(n): float(a) for n, a in sel.aics.items()},
                         predicted=predicted)
