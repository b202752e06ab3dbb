"""Print a target token for the lexical-removal preset.

The token is the translation of the first unambiguous source word of the
synthetic rule for the given root seed, so held-out prompts containing that
source word should produce it.

    python3 scripts/lexical_token.py --seed 0
    python3 -m kga preset lexical-removal --forget-token "$(python3 scripts/lexical_token.py)" --out runs/lex
"""
import argparse

from kga.data import translation_rule
from kga.harness.config import stage_seed
from kga.harness.presets import toy_translation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rule = translation_rule(toy_translation().synth_config(), stage_seed(args.seed, "data"))
    src = next(s for s in rule.mapping if s not in rule.alternates)
    print(rule.mapping[src])


if __name__ == "__main__":
    main()
