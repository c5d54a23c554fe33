"""HTTP+JSON API over :class:`GameServer`.

Teams authenticate with ``Authorization: Bearer <team token>``; judges use
the judge token for adjudication.
"""
from __future__ import annotations

from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from ..netids import alarm_dict
from .service import AuthError, Forbidden, GameError, GameServer


class FlagIn(BaseModel):
    challenge: str
    flag: str


class DeclarationIn(BaseModel):
    profile: str
    goal: str
    scenario: str | None = None


class AdjudicationIn(BaseModel):
    c: str | float
    undo_confirmed: bool


class OverrideIn(BaseModel):
    actuator: str
    command: str | None = None
    mode: str = "MANUAL"


def _token(authorization: str | None) -> str | None:
    if not authorization:
        return None
    scheme, _, value = authorization.partition(" ")
    return value.strip() if scheme.lower() == "bearer" else None


def create_app(game: GameServer) -> FastAPI:
    app = FastAPI(title="ICS range game server")
    app.state.game = game

    @app.exception_handler(GameError)
    async def game_error(request: Request, exc: GameError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    def team_of(authorization: str | None) -> str:
        return game.authenticate(_token(authorization))

    @app.post("/api/flags")
    def submit_flag(body: FlagIn, authorization: str | None = Header(default=None)):
        team = team_of(authorization)
        return {"team": team, "challenge": body.challenge,
                **game.submit_flag(team, body.challenge, body.flag).as_dict()}

    @app.get("/api/scoreboard")
    def scoreboard(start: float | None = None, end: float | None = None):
        series = game.scoreboard_series(start, end)
        return {"teams": game.scoreboard(),
                "series": {t: [[ts, v] for ts, v in pts] for t, pts in series.items()}}

    @app.get("/api/challenges")
    def challenges(authorization: str | None = Header(default=None)):
        team = team_of(authorization) if authorization else None
        return {"challenges": game.challenges(team)}

    @app.post("/api/sessions/{session_id}/declarations")
    def declare(session_id: str, body: DeclarationIn,
                authorization: str | None = Header(default=None)):
        team = team_of(authorization)
        decl = game.declare_attack(session_id, body.profile, body.goal, body.scenario, team=team)
        return {"declaration": decl, "session": session_id}

    @app.post("/api/declarations/{declaration_id}/adjudicate")
    def adjudicate(declaration_id: str, body: AdjudicationIn,
                   authorization: str | None = Header(default=None)):
        token = _token(authorization)
        if not token:
            raise AuthError("missing judge token")
        if not game.is_judge(token):
            raise Forbidden("adjudication is for judges only")
        rec = game.adjudicate(declaration_id, body.c, body.undo_confirmed)
        return {"declaration": rec.declaration, "team": rec.team, "goal": rec.goal,
                "s": f"{rec.s.numerator}/{rec.s.denominator}", "points": rec.points,
                "valid": rec.valid, "computed_at": rec.computed_at}

    @app.get("/api/alarms")
    def alarms(start: float | None = None, end: float | None = None,
               rule: str | None = None, node: str | None = None):
        return {"alarms": [alarm_dict(a) for a in game.alarms(start, end, rule, node)]}

    @app.get("/api/hmi/state")
    def hmi_state():
        return game.hmi_state()

    @app.post("/api/hmi/override")
    def hmi_override(body: OverrideIn, authorization: str | None = Header(default=None)):
        team = team_of(authorization)
        return {"accepted": True,
                **game.hmi_override(team, body.actuator, body.command, body.mode)}

    return app
