"""Finite-difference audit of every differentiable path in the stack."""

from ptsl.gradcheck import run_gradient_suite

print("Comparing taped gradients against central finite differences")
print("(step 1e-5, relative tolerance 1e-4) ...\n")

results, elapsed = run_gradient_suite()
for name, err, ok in results:
    print(f"  {name:<45} max relative error {err:.2e}  {'ok' if ok else 'FAIL'}")

failures = sum(0 if ok else 1 for _, _, ok in results)
print(f"\n{len(results)} checks in {elapsed:.1f}s, {failures} failures")
