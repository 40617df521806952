# FCI driven by a d-separation oracle.
#
# With perfect independence answers FCI returns the PAG of the true graph
# marginalised over its latent variables. Here a hidden common cause L of
# B and C turns their link into a bidirected edge.
from causal_probe import Dag, FciParams, run_fci
from causal_probe.citests import OracleTest
from causal_probe.fci import EdgeRemoved, RuleFired, VStructure

dag = Dag(["A", "B", "C", "D", "L"],
          [("A", "B"), ("L", "B"), ("L", "C"), ("D", "C")],
          latent=["L"])
print("observed:", dag.observed)

pag, trace = run_fci(OracleTest(dag), dag.observed, FciParams())
print(pag)               # A o-> B <-> C <-o D

# the trace records why each edge went away and which rules fired
for e in trace.of_type(EdgeRemoved):
    print(f"removed {e.a} - {e.b} given {sorted(e.sepset)}")
# colliders appear twice: once on the first skeleton, again after the
# Possible-D-SEP pass resets the marks
for e in trace.of_type(VStructure):
    print(f"collider {e.x} *-> {e.z} <-* {e.y}")
print(len(trace.of_type(RuleFired)), "orientation rule applications")

# replaying the trace from the complete graph reproduces the result
assert trace.replay() == pag
