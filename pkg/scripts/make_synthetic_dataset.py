#!/usr/bin/env python3
"""Generate a synthetic EHR case file for offline batch simulation.

Cases are built from complaint templates wired to taxonomy departments, so
triage truth labels are always consistent with the bundled taxonomy.
"""

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from preconsult.simulation import EhrRecord, write_dataset
from preconsult.triage import default_taxonomy

COMPLAINTS = {
    "Orthopedics": (
        "Lower back pain radiating to the left leg for {dur}.",
        "Patient reports pain that worsens with sitting and eases when walking. "
        "No recent trauma. Over-the-counter painkillers give partial relief.",
    ),
    "Internal Medicine": (
        "Burning upper abdominal pain after meals for {dur}.",
        "Pain starts half an hour after eating, worse with spicy food. "
        "Occasional acid reflux at night. No vomiting, no black stool.",
    ),
    "Surgery": (
        "A painless lump in the right groin, present for {dur}.",
        "The lump bulges on standing or coughing and disappears lying down. "
        "No redness, no fever, no bowel changes.",
    ),
    "Dermatology": (
        "Itchy red patches on both forearms for {dur}.",
        "Patches appeared gradually and itch more at night. No new soaps or "
        "detergents. Scratching leaves dry flaky skin.",
    ),
    "Otorhinolaryngology": (
        "Sore throat and hoarseness for {dur}.",
        "Voice worsens by evening. Mild pain on swallowing. No fever, "
        "no ear pain. Patient talks a lot at work.",
    ),
    "Ophthalmology": (
        "Blurred vision in the right eye for {dur}.",
        "Blurring is gradual and painless, worse in dim light. No flashes, "
        "no floaters, no eye redness.",
    ),
}

DURATIONS = ("three days", "a week", "two weeks", "a month", "half a year")

PH_CHOICES = (
    "Denies chronic diseases. No surgeries. No known allergies.",
    "Hypertension for five years, on regular medication. No surgeries. "
    "No drug or food allergies.",
    "Appendectomy ten years ago. No chronic diseases. Penicillin allergy.",
    "Type 2 diabetes, diet controlled. No surgical history. No allergies.",
)


def build_cases(n: int, seed: int) -> list[EhrRecord]:
    rng = random.Random(seed)
    taxonomy = default_taxonomy()
    usable = [p for p in COMPLAINTS if p in taxonomy.primaries]
    if not usable:
        raise SystemExit("no complaint templates match the bundled taxonomy")
    cases = []
    for i in range(n):
        primary = rng.choice(usable)
        secondary = rng.choice(taxonomy.children[primary])
        cc_tpl, hpi = COMPLAINTS[primary]
        cases.append(
            EhrRecord(
                case_id=f"syn-{i:04d}",
                cc=cc_tpl.format(dur=rng.choice(DURATIONS)),
                hpi=hpi,
                ph=rng.choice(PH_CHOICES),
                primary_dept=primary,
                secondary_dept=secondary,
            )
        )
    return cases


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="synthetic_cases.jsonl")
    parser.add_argument("--n", type=int, default=50)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    cases = build_cases(args.n, args.seed)
    write_dataset(cases, args.out)
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
