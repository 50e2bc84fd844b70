"""The full command-line pipeline, driven in-process.

Runs generate, matrices, train, eval, and predict against a temporary
workspace, the same sequence a shell user would type. Each call returns
the process exit code; anything nonzero here is a bug.
"""

import os
import tempfile

from laneformer.cli import main


def run(argv):
    print("\n$ laneformer " + " ".join(argv))
    code = main(argv)
    print(f"[exit {code}]")
    assert code == 0, argv
    return code


def main_demo():
    with tempfile.TemporaryDirectory() as base:
        gen_cfg = os.path.join(base, "gen.cfg")
        with open(gen_cfg, "w") as fh:
            fh.write("template=fork\ncount=6\nagent_count=3\nnoise_sigma=0.05\n")
        model_keys = ("d_model=16\nheads=2\nlayers=1\nn_lane_nodes=6\n"
                      "decoder_hidden=16\nmodes=4\ne_a2a=4\ne_a2l=8\ne_l2a=4\n")
        model_cfg = os.path.join(base, "model.cfg")
        with open(model_cfg, "w") as fh:
            fh.write(model_keys)
        # train also reads optimizer keys from the same file
        train_cfg = os.path.join(base, "train.cfg")
        with open(train_cfg, "w") as fh:
            fh.write(model_keys + "batch_size=2\nlr_init=1e-3\n")

        data = os.path.join(base, "data")
        mat_dir = os.path.join(base, "matrices")
        model_dir = os.path.join(base, "model")
        eval_dir = os.path.join(base, "eval")
        pred_dir = os.path.join(base, "pred")

        run(["generate", "--config", gen_cfg, "--seed", "9", "--out", data])
        run(["matrices", "--config", model_cfg, "--data", data,
             "--out", mat_dir])
        run(["train", "--config", train_cfg, "--data", data,
             "--out", model_dir, "--epochs", "3", "--seed", "0"])
        ckpt = os.path.join(model_dir, "model.ckpt")
        run(["eval", "--data", data, "--model", ckpt, "--out", eval_dir])
        run(["predict", "--data", data, "--model", ckpt, "--out", pred_dir])

        print("\nartifacts:")
        for d in (data, mat_dir, model_dir, eval_dir, pred_dir):
            names = sorted(os.listdir(d))
            shown = ", ".join(names[:4]) + (" ..." if len(names) > 4 else "")
            print(f"  {os.path.relpath(d, base)}/: {shown}")


if __name__ == "__main__":
    main_demo()
