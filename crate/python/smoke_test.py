"""Exercise the advst bindings end to end on the toy corpus."""

import json
import sys
import tempfile

import advst


def main() -> int:
    model = advst.SurrogateModel.train_toy(42)
    langs = model.languages()
    assert "en" in langs, langs

    case = advst.testbed_cases(model, 42, 1)[0]
    before = model.translate(case["carrier"], "en")
    print("carrier decodes to:", before)

    result = advst.perturbation_attack(
        model,
        case["carrier"],
        {"en": case["targets"]["en"]},
        json.dumps({"max_iteration": 200}),
    )
    print(result)
    after = model.translate(result.adversarial, "en")
    print("adversarial decodes to:", after, "| target:", case["targets"]["en"])
    assert result.exact_match == (after == case["targets"]["en"])

    scored = json.loads(result.scored().to_json())
    assert isinstance(scored, dict)

    defended = advst.defend(result.adversarial, model.sample_rate_hz, "lowpass")
    assert len(defended) == len(result.adversarial)

    chosen, trace = advst.cycle_optimize(model, case["targets"]["en"], "en", [l for l in langs if l != "en"])
    print("cycle-optimized target:", chosen)
    assert json.loads(trace)["chosen"] == chosen

    echo = lambda text, source, target: text
    chosen, _ = advst.cycle_optimize(echo, "Hello there.", "en", ["de"], languages=["en", "de"])
    assert chosen == "Hello there."

    assert advst.esim("a b c", "a b c") > 0.999
    assert advst.esim("a b", "x y") == 0.0
    assert advst.nscore("the cat sat", "the cat") == 1.0
    assert advst.judge_success("Are you crazy?", "Are you insane?", ["Are you crazy?"])
    assert advst.attack_success_rate([True, False, True])[3] == "2/3"
    assert abs(advst.latent_prior_kl([1.0, -1.0])) < 1e-12

    try:
        advst.attack_success_rate([])
    except advst.AdvstError as e:
        print("expected error:", e)
    else:
        raise AssertionError("empty outcome list must fail")

    with tempfile.TemporaryDirectory() as out:
        manifest = json.loads(advst.run_job(json.dumps({"seed": 1, "job": {"train-surrogate": {}}}), out))
        assert manifest["status"] == "ok", manifest
        print("job artifacts:", [a["path"] for a in manifest["artifacts"]])

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
