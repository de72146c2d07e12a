import hashlib
import json
from datetime import datetime, timezone

from pydantic import BaseModel, Field


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def config_hash(config: dict) -> str:
    payload = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class RunManifest(BaseModel):
    run_id: str
    command: str
    config: dict
    config_hash: str
    seed: int
    output_dir: str
    checkpoint_paths: list[str] = Field(default_factory=list)
    artifacts: list[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=_now)
    finished_at: str | None = None

    @classmethod
    def create(cls, command: str, config: dict, seed: int, output_root: str) -> "RunManifest":
        digest = config_hash({"command": command, "seed": seed, **config})
        run_id = f"{command}-{digest[:12]}"
        return cls(
            run_id=run_id,
            command=command,
            config=config,
            config_hash=digest,
            seed=seed,
            output_dir=f"{output_root}/{run_id}",
        )

    def add_artifact(self, path: str) -> None:
        if path not in self.artifacts:
            self.artifacts.append(path)

    def add_checkpoint(self, path: str) -> None:
        if path not in self.checkpoint_paths:
            self.checkpoint_paths.append(path)
        self.add_artifact(path)

    def finish(self) -> None:
        self.finished_at = _now()
