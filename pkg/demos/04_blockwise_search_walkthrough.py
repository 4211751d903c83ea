"""Blockwise synchronous beam search on a scripted utterance.

Replays the bundled walkthrough script: a five-wide beam follows
"he clasped his hands" through the first encoded block until every step-6
candidate is an already-emitted token or eos.  Boundary detection rejects
that step, waits for the second block, and decoding resumes to the full
sentence.  Conservative decoding rewinds one extra step.
"""

import numpy as np

from blockbeam import DecodeConfig, DecodingSession, EncodedBlock
from blockbeam.scorers import parse_table_file

script = parse_table_file("demos/scenarios/fig_walkthrough.tbl")
vocab = script.vocab


def blocks():
    return [EncodedBlock(index=b, vectors=np.zeros((1, 1)), frame_start=b - 1,
                         frame_end=b, is_last=(b == script.n_blocks))
            for b in range(1, script.n_blocks + 1)]


def run(conservative):
    config = DecodeConfig(beam_width=5, i_max=32, conservative=conservative)
    session = DecodingSession({"attention": script.scorer}, config, vocab)
    session.push_block(blocks()[0])
    print(f"  after block 1 the best partial hypothesis is: "
          f"'{vocab.text(session.partial_best().tokens)}'")
    session.push_block(blocks()[1])
    result = session.finalize()
    for event in result.trace.events:
        if event["type"] == "step":
            top = event["beam"][0]
            print(f"  step {event['i']} (blocks={event['b']}): "
                  f"'{vocab.text(top['tokens'])}'  ({top['score']:.3f})")
        elif event["type"] == "bbd_check" and event["decision"] == "boundary":
            worst = min(h["s"] for h in event["hyps"])
            print(f"  step {event['i']}: unreliable beam (min s = {worst:.3f}) "
                  f"-> wait for the next block")
        elif event["type"] == "index_boundary":
            print(f"  index boundary I_{event['b']} = {event['i_b']}")
    print(f"  result: '{vocab.text(result.best.tokens)}'  "
          f"score {result.best.score_total:.3f}")
    print(f"  steps re-decoded after rewinds: {result.trace.redecoded_steps}")


print("default decoding (rewind one step at a boundary):")
run(conservative=False)
print("\nconservative decoding (rewind two steps):")
run(conservative=True)

print("\neos-only ablation on the repetition script:")
ablation = parse_table_file("demos/scenarios/repetition_ablation.tbl")
for criterion, label in ((True, "repetition+eos"), (False, "eos only")):
    from blockbeam import blockwise_synchronous_beam_search
    config = DecodeConfig(beam_width=5, i_max=32, repetition_criterion=criterion)
    dummy = [EncodedBlock(index=b, vectors=np.zeros((1, 1)), frame_start=b - 1,
                          frame_end=b, is_last=(b == ablation.n_blocks))
             for b in range(1, ablation.n_blocks + 1)]
    res = blockwise_synchronous_beam_search(dummy, {"attention": ablation.scorer},
                                            config, ablation.vocab)
    fired = [c["i"] for c in res.trace.boundary_checks if c["decision"] == "boundary"]
    print(f"  {label:15s} boundaries at steps {fired} -> "
          f"'{ablation.vocab.text(res.best.tokens)}'")
