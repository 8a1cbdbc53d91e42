#!/usr/bin/env python3
"""Audit the built-in recipe against Whisper-small's published dimensions.

Builds the closed-form Whisper-small parameter registry (tied output
projection, no key-projection bias), prints the encoder/decoder split and the
overall sparsity the recipe reaches, optionally as JSON.

Usage:
    python scripts/recipe_audit.py
    python scripts/recipe_audit.py --json --per-entry
"""

import argparse
import json
import sys

# Add project root to path
sys.path.insert(0, ".")

from app.services import allocation_service, pruning_service


def entry_rows():
    """(selector label, rho, size, pruned) per recipe entry."""
    registry = allocation_service.whisper_small_registry()
    plan = allocation_service.sensitivity_recipe(allocation_service.WHISPER_SMALL.dec_layers, tied_output_proj=True)
    rows = []
    for entry in plan.entries:
        size = registry.selected_count(entry.selector)
        rows.append((entry.selector.label, entry.rho, size, pruning_service.pruned_count_for(entry.rho, size)))
    return rows


def main():
    parser = argparse.ArgumentParser(description="Whisper-small recipe audit")
    parser.add_argument("--json", action="store_true", help="Print the audit as JSON")
    parser.add_argument("--per-entry", action="store_true", help="Include one line per recipe entry")
    args = parser.parse_args()

    audit = allocation_service.recipe_audit()
    rows = entry_rows() if args.per_entry else []

    if args.json:
        payload = dict(audit)
        if rows:
            payload["entries"] = [
                {"selector": label, "rho": rho, "params": size, "pruned": pruned}
                for label, rho, size, pruned in rows
            ]
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0

    total = int(audit["total_params"])
    print(f"Whisper-small parameters: {total:,}")
    print(f"  encoder: {int(audit['encoder_params']):,} ({100 * audit['encoder_params'] / total:.2f}%)")
    print(f"  decoder: {int(audit['decoder_params']):,} ({100 * audit['decoder_params'] / total:.2f}%)")
    for label, rho, size, pruned in rows:
        print(f"  {label:<40} rho={rho:.2f} {pruned:>12,} / {size:>12,}")
    print(f"Recipe overall sparsity: {100 * audit['overall_sparsity']:.2f}%")
    return 0


if __name__ == "__main__":
    sys.exit(main())
