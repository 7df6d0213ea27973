"""The median stopping rule, step by step.

An assessor watches every trial's intermediate metrics and stops the ones
that are clearly going nowhere. The rule here: once enough trials have
finished, a running trial stops if its best result so far is strictly
below the median of the completed trials' running averages at the same
step. This demo builds the completed population by hand and walks a weak
trial into the stopping decision.
"""

from __future__ import annotations

from spikehpo.assessor import AssessVerdict, MedianStopAssessor


def main() -> None:
    assessor = MedianStopAssessor(start_step=10, optimize_mode="maximize")

    # three completed trials with flat learning curves at 0.5 / 0.6 / 0.7,
    # so their running averages at any depth are those same constants
    for trial, level in (("steady50", 0.5), ("steady60", 0.6), ("steady70", 0.7)):
        for step in range(1, 13):
            assessor.record(trial, step, level)
        assessor.complete(trial)
        print(f"completed {trial} with constant metric {level}")

    print("\nmedian of completed running averages: 0.6")
    print("a new trial stuck at 0.55 now reports step by step:\n")
    for step in range(1, 13):
        assessor.record("newcomer", step, 0.55)
        decision = assessor.assess("newcomer", step)
        note = ""
        if step < 10:
            note = "(before start_step: never stopped)"
        elif decision is AssessVerdict.STOP:
            note = "(best-so-far 0.55 < median 0.6)"
        print(f"  step {step:>2}: {decision.name:<8} {note}")
        if decision is AssessVerdict.STOP:
            break

    # a trial that ever touched the median survives: the rule compares the
    # BEST intermediate so far, so one early good step protects a trial
    assessor2 = MedianStopAssessor(start_step=10, optimize_mode="maximize")
    for trial, level in (("steady50", 0.5), ("steady60", 0.6), ("steady70", 0.7)):
        for step in range(1, 13):
            assessor2.record(trial, step, level)
        assessor2.complete(trial)
    assessor2.record("onegood", 1, 0.65)
    for step in range(2, 13):
        assessor2.record("onegood", step, 0.1)
    print("\na trial that opened at 0.65 and collapsed to 0.1 afterwards:")
    print(f"  step 12: {assessor2.assess('onegood', 12).name} "
          "(its best, 0.65, still beats the median)")

    # ties survive too -- stopping requires being strictly below the median
    assessor2.record("ontheline", 1, 0.6)
    for step in range(2, 11):
        assessor2.record("ontheline", step, 0.6)
    print(f"  a trial pinned exactly at the median: "
          f"{assessor2.assess('ontheline', 10).name} (ties are not stopped)")


if __name__ == "__main__":
    main()
