"""Command-line client: local encrypt-and-upload for providers, sharing,
workflow submission, status, results, and the end-to-end demo.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 API error (the machine code is printed verbatim), 3 local I/O error.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .client import PlatformClient
from .errors import ApiError, CsvParseError, VaultbenchError
from .util import iso_to_ms

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_API = 2
EXIT_LOCAL = 3


def _load_cli_config(path: str | None) -> dict:
    candidates = [path] if path else [os.path.expanduser("~/.vaultbench.json")]
    for candidate in candidates:
        if candidate and os.path.isfile(candidate):
            with open(candidate, encoding="utf-8") as fh:
                return json.load(fh)
    return {}


class Ctx:
    def __init__(self, endpoint, principal, secret, output, data_dir):
        self.endpoint = endpoint
        self.principal = principal
        self.secret = secret
        self.output = output
        self.data_dir = data_dir

    def client(self, principal=None, secret=None) -> PlatformClient:
        if not self.endpoint:
            raise click.UsageError("no coordinator endpoint (use --endpoint or a config file)")
        use_principal = principal or self.principal
        use_secret = secret or self.secret
        if not use_principal or not use_secret:
            raise click.UsageError("no principal credentials (use --principal/--secret or a config file)")
        return PlatformClient(self.endpoint, use_principal, use_secret)

    def emit(self, human: str, payload: dict) -> None:
        if self.output == "json":
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
        else:
            click.echo(human)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="CLI config file (JSON: endpoint, principal_id, secret, data_dir).")
@click.option("--endpoint", default=None, help="Coordinator endpoint, e.g. http://127.0.0.1:8700.")
@click.option("--principal", default=None, help="Principal id.")
@click.option("--secret", default=None, help="Principal secret (prefer the config file).")
@click.option("--output", type=click.Choice(["text", "json"]), default="text")
@click.pass_context
def cli(ctx, config_path, endpoint, principal, secret, output):
    """Secure analytics sandbox client."""
    file_config = _load_cli_config(config_path)
    ctx.obj = Ctx(
        endpoint=endpoint or file_config.get("endpoint"),
        principal=principal or file_config.get("principal_id"),
        secret=secret or file_config.get("secret"),
        output=output,
        data_dir=file_config.get("data_dir") or os.path.join(os.path.expanduser("~"), ".vaultbench"),
    )


@cli.command()
@click.argument("csv_path", type=click.Path())
@click.option("--name", required=True, help="Catalogue name for the dataset.")
@click.pass_obj
def upload(ctx: Ctx, csv_path, name):
    """Parse a local CSV, encrypt it locally, upload the envelope."""
    try:
        with open(csv_path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise _LocalIo(f"cannot read {csv_path}: {exc}")
    client = ctx.client()
    record = client.upload_csv_text(text, name)
    ctx.emit(
        f"uploaded dataset {record['dataset_id']} ({record['row_count']} rows)",
        record,
    )


@cli.command()
@click.argument("dataset_id")
@click.argument("consumer_id")
@click.option("--ttl", default=3600.0, show_default=True, help="Agreement lifetime in seconds.")
@click.pass_obj
def share(ctx: Ctx, dataset_id, consumer_id, ttl):
    """Grant a consumer a revocable, expiring sharing agreement."""
    record = ctx.client().grant(dataset_id, consumer_id, ttl_seconds=ttl)
    ctx.emit(
        f"agreement {record['agreement_id']} active until {record['expires_at_ms']}",
        record,
    )


@cli.command()
@click.argument("workflow_file", type=click.Path())
@click.option("--at", "at_iso", default=None, help="Schedule at an ISO-8601 UTC time instead of now.")
@click.option("--wait/--no-wait", default=False, help="Poll until the job is terminal.")
@click.pass_obj
def run(ctx: Ctx, workflow_file, at_iso, wait):
    """Create a workflow from a JSON file and submit it."""
    try:
        with open(workflow_file, encoding="utf-8") as fh:
            definition = json.load(fh)
    except OSError as exc:
        raise _LocalIo(f"cannot read {workflow_file}: {exc}")
    except json.JSONDecodeError as exc:
        raise _LocalIo(f"workflow file is not valid JSON: {exc}")
    schedule = {"type": "immediate"}
    if at_iso:
        try:
            schedule = {"type": "at", "at_ms": iso_to_ms(at_iso)}
        except ValueError as exc:
            raise click.UsageError(f"--at is not ISO-8601: {exc}")
    client = ctx.client()
    workflow = client.create_workflow(definition)
    job = client.submit_job(workflow["workflow_id"], schedule)
    if wait:
        job = client.wait_for_job(job["job_id"], timeout_s=120.0)
    ctx.emit(f"job {job['job_id']} {job['state']}", job)


@cli.command()
@click.argument("job_id")
@click.pass_obj
def status(ctx: Ctx, job_id):
    """Show job state and per-phase timestamps."""
    record = ctx.client().job_status(job_id)
    ordered = sorted(record["timestamps"].items(), key=lambda kv: kv[1])
    lines = [f"job {record['job_id']}: {record['state']}"]
    lines += [f"  {state:<20} {ts}" for state, ts in ordered]
    if record.get("error"):
        lines.append(f"  error: {record['error']['code']}: {record['error']['message']}")
    ctx.emit("\n".join(lines), record)


@cli.command()
@click.argument("job_id")
@click.option("--series", "want_series", is_flag=True, help="Fetch the chart series instead of the result set.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Write to a file instead of stdout.")
@click.pass_obj
def results(ctx: Ctx, job_id, want_series, out_path):
    """Fetch decrypted results (owner only, audited)."""
    client = ctx.client()
    payload = client.job_series(job_id) if want_series else client.job_results(job_id)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        try:
            with open(out_path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        except OSError as exc:
            raise _LocalIo(f"cannot write {out_path}: {exc}")
        ctx.emit(f"wrote {out_path}", {"written": out_path})
    else:
        click.echo(text)


@cli.command()
@click.option("--provider", "provider_cred", default="provider:provider-secret",
              show_default=True, help="Provider credentials as id:secret.")
@click.option("--consumer", "consumer_cred", default="consumer:consumer-secret",
              show_default=True, help="Consumer credentials as id:secret.")
@click.option("--seed", default=42, show_default=True)
@click.pass_obj
def demo(ctx: Ctx, provider_cred, consumer_cred, seed):
    """Scripted tour: generate, upload, share, analyze, chart."""
    from .demo import run_demo

    try:
        provider_id, provider_secret = provider_cred.split(":", 1)
        consumer_id, consumer_secret = consumer_cred.split(":", 1)
    except ValueError:
        raise click.UsageError("credentials must look like id:secret")
    provider = ctx.client(provider_id, provider_secret)
    consumer = ctx.client(consumer_id, consumer_secret)
    local_csv = os.path.join(ctx.data_dir, f"flight-delays-{seed}.csv")
    summary = run_demo(provider, consumer, seed=seed, emit=click.echo, local_csv_path=local_csv)
    ctx.emit("demo completed", summary)


class _LocalIo(Exception):
    pass


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except ApiError as exc:
        click.echo(f"api error: {exc.code}: {exc}", err=True)
        return EXIT_API
    except CsvParseError as exc:
        click.echo(f"parse error: {exc}", err=True)
        return EXIT_LOCAL
    except _LocalIo as exc:
        click.echo(f"local i/o error: {exc}", err=True)
        return EXIT_LOCAL
    except (ConnectionError, TimeoutError, OSError) as exc:
        click.echo(f"connection error: {exc}", err=True)
        return EXIT_API
    except VaultbenchError as exc:
        click.echo(f"error: {exc.code}: {exc}", err=True)
        return EXIT_API
    except RuntimeError as exc:
        click.echo(f"failed: {exc}", err=True)
        return EXIT_API


if __name__ == "__main__":
    sys.exit(main())
