"""Command-line client for the service.

Every subcommand is a thin HTTP client. By default it mounts the FastAPI app
in-process (no socket, same filesystem); pass --server URL to talk to a
running instance instead, e.g. one started with `vig serve`.
"""

import sys

import click
import httpx
import numpy as np

from .imageio import read_image
from .service.schemas import decode_bytes, encode_array, encode_bytes


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # this starlette release nags about its own httpx test shim
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _post(client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        raise click.ClickException(f"{path} failed ({resp.status_code}): {resp.text}")
    return resp.json()


@click.group()
@click.option("--server", default=None, envvar="VIG_SERVER", metavar="URL",
              help="Base URL of a running service; defaults to in-process.")
@click.pass_context
def main(ctx, server):
    """Gated linear attention for vision: checks, accounting, benchmarks,
    training and inference."""
    ctx.obj = server


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("vig.service.app:app", host=host, port=port)


@main.command()
@click.option("--names", default=None, metavar="A,B,...",
              help="Subset of checks to run (default: all).")
@click.pass_obj
def check(server, names):
    """Run the oracle-equivalence and gradient suites; exit 1 on failure."""
    payload = {"names": names.split(",") if names else None}
    data = _post(make_client(server), "/check", payload)
    for r in data["results"]:
        status = "PASS" if r["passed"] else "FAIL"
        click.echo(f"{status} {r['name']:24s} {r['detail']} ({r['seconds']:.2f}s)")
    if not data["passed"]:
        sys.exit(1)
    click.echo("all checks passed")


@main.command()
@click.option("--seq", required=True, type=int, help="Number of tokens T.")
@click.option("--dim", required=True, type=int, help="Embedding width d.")
@click.pass_obj
def flops(server, seq, dim):
    """Closed-form layer FLOPs at (T, d)."""
    data = _post(make_client(server), "/flops", {"seq_len": seq, "dim": dim})
    click.echo(f"bigla        {data['bigla']}")
    click.echo(f"softmax_attn {data['softmax_attn']}")


@main.command()
@click.option("--config", default="vig-t", show_default=True,
              help="Preset name: vig-t, vig-s, vig-b or vig-tiny.")
@click.option("--image-size", default=224, show_default=True, type=int)
@click.option("--num-classes", default=1000, show_default=True, type=int)
@click.pass_obj
def params(server, config, image_size, num_classes):
    """Itemized learnable-parameter count for a preset."""
    data = _post(make_client(server), "/params",
                 {"config": config, "image_size": image_size,
                  "num_classes": num_classes})
    for name, n in data["breakdown"].items():
        click.echo(f"{name:16s} {n:>12,}")
    click.echo(f"{'total':16s} {data['total']:>12,} ({data['total'] / 1e6:.2f}M)")


@main.command()
@click.option("--variants", default="bigla_fused,softmax_attn", show_default=True,
              metavar="A,B,...")
@click.option("--seq-lens", default="1024,2048,4096,8192,16384", show_default=True,
              metavar="T1,T2,...")
@click.option("--dim", default=64, show_default=True, type=int)
@click.option("--repeats", default=3, show_default=True, type=int)
@click.option("--chunk", default=64, show_default=True, type=int)
@click.option("--csv", "csv_path", default=None, metavar="PATH",
              help="Write the results table to PATH.")
@click.pass_obj
def bench(server, variants, seq_lens, dim, repeats, chunk, csv_path):
    """Latency scaling sweep across sequence lengths (float32, timed)."""
    payload = {"variants": variants.split(","),
               "seq_lens": [int(t) for t in seq_lens.split(",")],
               "dim": dim, "repeats": repeats, "chunk": chunk}
    data = _post(make_client(server), "/bench", payload)
    click.echo(data["csv"].rstrip())
    for name, slope in data["slopes"].items():
        click.echo(f"# log-log wall-time slope {name}: {slope:.3f}")
    for r in data["reports"]:
        if r["timer_warning"]:
            click.echo(f"# warning: timer resolution marginal for {r['variant']} "
                       f"T={r['t']}")
    if csv_path:
        with open(csv_path, "w") as f:
            f.write(data["csv"])
        click.echo(f"# wrote {csv_path}")


@main.command()
@click.option("--task", default="bars", show_default=True,
              help="Synthetic task family: bars or blobs.")
@click.option("--steps", default=2000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--config", default="vig-tiny", show_default=True)
@click.option("--batch-size", default=32, show_default=True, type=int)
@click.option("--save", "save_path", default=None, metavar="PATH",
              help="Write trained weights to PATH.")
@click.option("--metrics", "metrics_path", default=None, metavar="PATH",
              help="Write the per-step metrics CSV to PATH.")
@click.option("--force-local/--no-force-local", default=False,
              help="Ablate the global branch (local mixing only).")
@click.option("--stop-at-acc", default=None, type=float,
              help="Stop once held-out accuracy reaches this value.")
@click.pass_obj
def train(server, task, steps, seed, config, batch_size, save_path,
          metrics_path, force_local, stop_at_acc):
    """Train on a synthetic task and report held-out accuracy."""
    payload = {"task": task, "steps": steps, "seed": seed, "config": config,
               "batch_size": batch_size, "force_local": force_local,
               "stop_at_acc": stop_at_acc}
    data = _post(make_client(server), "/train", payload)
    for row in data["history"]:
        if row["heldout_acc"] is not None:
            click.echo(f"step {row['step']:5d}  loss {row['loss']:.4f}  "
                       f"acc {row['heldout_acc']:.4f}")
    click.echo(f"finished after {data['steps_run']} steps; "
               f"held-out accuracy {data['final_acc']:.4f}")
    if save_path:
        with open(save_path, "wb") as f:
            f.write(decode_bytes(data["weights_b64"]))
        click.echo(f"wrote weights to {save_path}")
    if metrics_path:
        with open(metrics_path, "w") as f:
            f.write(data["metrics_csv"])
        click.echo(f"wrote metrics to {metrics_path}")


@main.command()
@click.option("--weights", "weights_path", required=True, metavar="PATH")
@click.option("--image", "image_path", required=True, metavar="PATH",
              help="Input image (.ppm P6 or .npy float array).")
@click.pass_obj
def infer(server, weights_path, image_path):
    """Classify one image with a trained weights file."""
    with open(weights_path, "rb") as f:
        blob = f.read()
    img = read_image(image_path)
    payload = {"weights_b64": encode_bytes(blob),
               "image_b64": encode_array(img),
               "image_shape": list(img.shape)}
    data = _post(make_client(server), "/infer", payload)
    logits = ", ".join(f"{v:.6f}" for v in data["logits"])
    click.echo(f"logits: [{logits}]")
    click.echo(f"predicted class: {data['predicted']}")


if __name__ == "__main__":
    main()
