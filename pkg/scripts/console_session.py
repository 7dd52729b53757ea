#!/usr/bin/env python3
"""Interactive console consultation: you answer as the patient.

Needs a backend config JSON, e.g.::

    {"kind": "http_openai_compatible", "base_url": "http://localhost:8000/v1",
     "model_id": "my-model", "api_key_env": "MY_KEY"}

Type your replies at the prompt; the final record and triage suggestion are
printed when the session ends.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from preconsult import (
    BackendConfig,
    ConsultationEngine,
    PreconsultError,
    SessionConfig,
    SessionStatus,
    build_engine,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--backend", required=True, help="backend config JSON path")
    parser.add_argument(
        "--strategy", choices=("agent_driven", "default_order"), default="agent_driven"
    )
    parser.add_argument("--max-rounds", type=int, default=30)
    args = parser.parse_args()

    backend = BackendConfig.from_dict(
        json.loads(Path(args.backend).read_text(encoding="utf-8"))
    )
    engine = build_engine(
        backend,
        SessionConfig(controller_strategy=args.strategy, max_rounds=args.max_rounds),
    )

    state = engine.start_session()
    print(f"[assistant] {state.last_question()}")
    while state.status is SessionStatus.ACTIVE:
        try:
            reply = input("[you] ").strip()
        except (EOFError, KeyboardInterrupt):
            print("\nsession aborted")
            return 130
        if not reply:
            continue
        try:
            state = engine.run_round(state, reply)
        except PreconsultError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        if state.status is SessionStatus.ACTIVE:
            print(f"[assistant] {state.last_question()}")

    outcome = ConsultationEngine.outcome(state)
    print(f"\nsession {outcome.status.value} after {outcome.rounds_used} rounds")
    print(f"Chief Complaint: {outcome.record.cc}")
    print(f"History of Present Illness: {outcome.record.hpi}")
    print(f"Past History: {outcome.record.ph}")
    if outcome.triage is not None:
        primary, secondary = outcome.triage.top()
        print(f"Suggested department: {primary} / {secondary}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
