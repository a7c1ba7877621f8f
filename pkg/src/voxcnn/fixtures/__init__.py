"""Shipped architecture files (JSON layer lists)."""

from importlib import resources

from ..graph import ModelSpec, load_spec


def fixture_path(name: str):
    """Filesystem path of a shipped architecture file (e.g. ``"pet_8"``)."""
    return resources.files(__package__).joinpath(f"{name}.json")


def load_fixture(name: str) -> ModelSpec:
    return load_spec(fixture_path(name))


def available() -> list[str]:
    return sorted(
        p.name[: -len(".json")]
        for p in resources.files(__package__).iterdir()
        if p.name.endswith(".json")
    )
