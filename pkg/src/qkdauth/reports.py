"""Session report schema (also the wire format of the service and CLI)."""
from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from .channel import Transcript


class MessageRecord(BaseModel):
    seq: int
    sender: str
    tag: str
    payload_hex: str


class SessionReport(BaseModel):
    """Outcome of one protocol session."""

    protocol: str
    seed: int
    num_rounds: int
    qber: Optional[float] = None
    bell_s: Optional[float] = None
    alice_verified: Optional[bool] = None
    bob_verified: Optional[bool] = None
    final_key_alice: str = ""
    final_key_bob: str = ""
    leaked_bits: int = 0
    aborted: bool = False
    abort_reason: Optional[str] = None
    stats: dict[str, float] = Field(default_factory=dict)
    transcript: list[MessageRecord] = Field(default_factory=list)

    def model_post_init(self, _ctx):
        if self.aborted and (self.final_key_alice or self.final_key_bob):
            raise ValueError("aborted sessions must not carry final keys")


def transcript_records(transcript: Transcript) -> list[MessageRecord]:
    """Classical messages of a transcript in report form."""
    return [
        MessageRecord(
            seq=m.seq, sender=m.sender, tag=m.tag.value, payload_hex=m.payload.hex()
        )
        for m in transcript.messages
    ]
