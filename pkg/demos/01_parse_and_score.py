"""Parse a model answer in constructor syntax and score it against gold events.

Run with ``python3 demos/01_parse_and_score.py``. No model is called.
"""
from __future__ import annotations

from promptmcts import EventInstance, compose, parse_output, score_ee, serialize_instances
from promptmcts.runner import bundled_root, bundled_schema

schema = bundled_schema()
root = bundled_root()

text = "A federal judge convicted the former mayor of bribery and sentenced him to ten years in prison."
gold = [
    EventInstance("Convict", "convicted", {"adjudicator": ["A federal judge"], "defendant": ["the former mayor"],
                                           "crime": ["bribery"]}),
    EventInstance("SentenceAct", "sentenced", {"adjudicator": ["A federal judge"], "defendant": ["him"],
                                               "sentence": ["ten years in prison"]}),
]

# a typical answer: the first event is right, the second misses its adjudicator and mislabels the sentence
answer = """Let me look at the sentence first.
result = [
    Convict(mention="convicted", defendant=["the former mayor"], adjudicator=["A federal judge"], crime=["bribery"]),
    SentenceAct(mention="sentenced", defendant=["him"], crime=["ten years in prison"]),
]"""

outcome = parse_output(answer, schema)
print("parsed:", serialize_instances(outcome.instances, schema))
print("diagnostics:", [d.message for d in outcome.diagnostics] or "none")

report = score_ee([outcome.instances], [gold])
for metric in ("TI", "TC", "AI", "AC"):
    m = report[metric]
    print(f"{metric}: tp={m.tp} fp={m.fp} fn={m.fn} P={m.precision:.1f} R={m.recall:.1f} F1={m.f1:.1f}")
print(f"reward (mean of the four F1 scores): {report.reward:.2f}")

prompt = compose(root, schema)
print(f"\nroot prompt: {len(prompt.split())} whitespace tokens; first lines:")
print("\n".join(prompt.splitlines()[:6]))
