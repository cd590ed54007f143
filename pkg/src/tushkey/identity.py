"""Identity providers: how a daemon learns which user it belongs to.

The real deployment would hand this to an OAuth2/SSO flow; here the
interface is pluggable with a deterministic mock and a file-backed stub so
flows stay scriptable. The provider's user id becomes the account key at
both servers, and the opaque assertion field is reserved for a future
provider-signed claim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol


class IdentityError(Exception):
    pass


@dataclass(frozen=True)
class IdentityResult:
    user_id: str
    assertion: str = ""


class IdentityProvider(Protocol):
    def authenticate(self) -> IdentityResult:
        ...


class MockIdentityProvider:
    """Always returns the same principal."""

    def __init__(self, user_id: str, assertion: str = "mock") -> None:
        if not user_id or "@" not in user_id:
            raise IdentityError(f"not an email-shaped user id: {user_id!r}")
        self._result = IdentityResult(user_id=user_id, assertion=assertion)

    def authenticate(self) -> IdentityResult:
        return self._result


class FileIdentityProvider:
    """Reads {"user_id": ..., "assertion": ...} from a JSON file.

    Stands in for an interactive login: an operator (or test) writes the
    file, the daemon picks it up.
    """

    def __init__(self, path: str) -> None:
        self._path = Path(path)

    def authenticate(self) -> IdentityResult:
        try:
            data = json.loads(self._path.read_text())
            user_id = data["user_id"]
        except (OSError, ValueError, KeyError) as exc:
            raise IdentityError(f"identity file unusable: {exc}") from exc
        if not isinstance(user_id, str) or "@" not in user_id:
            raise IdentityError("identity file has no email-shaped user_id")
        return IdentityResult(user_id=user_id, assertion=str(data.get("assertion", "")))


class FailingIdentityProvider:
    """Test double for provider outages."""

    def authenticate(self) -> IdentityResult:
        raise IdentityError("identity provider unavailable")


def provider_from_spec(spec: dict) -> IdentityProvider:
    """Build a provider from the daemon config's `identity` stanza."""
    kind = spec.get("kind")
    if kind == "mock":
        return MockIdentityProvider(spec.get("user_id", ""))
    if kind == "file":
        path = spec.get("path")
        if not path:
            raise IdentityError("file identity provider needs a path")
        return FileIdentityProvider(path)
    raise IdentityError(f"unknown identity provider kind: {kind!r}")
