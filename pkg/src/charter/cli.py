"""Command-line client. Thin layer over the library modules.

Exit codes: 0 success, 1 domain error, 2 usage error. Every option can also
be set through a ``CHARTER_*`` environment variable; flags win.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import click

from charter import __version__
from charter import chart as chartmod
from charter import provenance, repository
from charter.errors import CharterError, NotFound
from charter.gateway import DEFAULT_CLUSTER_URL, ClusterGateway
from charter.release import InstallOptions, ReleaseManager, verify_source
from charter.values import merge_values

OUTPUT = click.option(
    "-o", "--output", type=click.Choice(["table", "json"]), default="table", show_default=True, help="Output format."
)


def _namespace_option(default: str | None = "default"):
    return click.option(
        "-n",
        "--namespace",
        envvar="CHARTER_NAMESPACE",
        default=default,
        show_default=default is not None,
        help="Target namespace.",
    )


CLUSTER_URL = click.option(
    "--cluster-url",
    envvar="CHARTER_CLUSTER_URL",
    default=DEFAULT_CLUSTER_URL,
    show_default=True,
    help="Base URL of the control plane.",
)


def _table(rows: Sequence[Sequence[Any]], headers: Sequence[str]) -> None:
    cells = [list(map(str, headers))] + [["" if c is None else str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    for row in cells:
        click.echo("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())


def _json(data: Any) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


def _manager(cluster_url: str) -> ReleaseManager:
    return ReleaseManager(ClusterGateway(cluster_url))


def resolve_chart_ref(ref: str, version: str | None = None):
    """Local directory, then local ``.tgz``, then ``alias/name``.

    Returns ``(chart_or_archive, provenance_record_or_None)``.
    """
    path = Path(ref)
    if path.is_dir():
        return chartmod.load(path), None
    if path.is_file():
        archive = chartmod.ChartArchive.from_path(path)
        record = None
        if provenance.provenance_path(path).exists():
            record = provenance.read_provenance(path)
        return archive, record
    alias, sep, name = ref.partition("/")
    if not sep or not alias or not name or "/" in name:
        raise NotFound(f"chart reference {ref!r} is neither a directory, an archive, nor alias/name")
    repo = repository.RepositoryConfig.load().get(alias)
    return repository.fetch_chart_with_provenance(repo, name, version)


def _loaded(source) -> chartmod.Chart:
    return chartmod.load_archive(source) if isinstance(source, chartmod.ChartArchive) else source


@click.group(context_settings={"help_option_names": ["-h", "--help"], "auto_envvar_prefix": "CHARTER"})
@click.version_option(__version__, prog_name="charter")
def cli() -> None:
    """Package, distribute and manage templated manifest bundles."""


# -- chart development -------------------------------------------------------


@cli.command()
@click.argument("name")
@click.option("-C", "--directory", default=".", type=click.Path(file_okay=False), help="Parent directory.")
def create(name: str, directory: str) -> None:
    """Scaffold a new chart directory NAME."""
    root = chartmod.scaffold(name, directory)
    click.echo(f"Created chart {name} in {root}")


@cli.command()
@click.argument("path", type=click.Path(exists=True))
def lint(path: str) -> None:
    """Validate a chart directory or archive."""
    report = chartmod.lint_path(path)
    for f in report.findings:
        click.echo(f"[{f.severity.upper()}] {f.rule} {f.path}: {f.message}")
    click.echo(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")
    if report.errors:
        raise click.exceptions.Exit(1)


@cli.command()
@click.argument("path", type=click.Path(exists=True, file_okay=False))
@click.option("-d", "--destination", default=".", type=click.Path(file_okay=False), help="Output directory.")
@click.option("--sign", is_flag=True, help="Write a .prov provenance sidecar.")
@click.option("--key", "key_path", type=click.Path(exists=True, dir_okay=False), help="Private key for --sign.")
def package(path: str, destination: str, sign: bool, key_path: str | None) -> None:
    """Archive a chart directory into a .tgz."""
    if sign and not key_path:
        raise click.UsageError("--sign needs --key")
    archive = chartmod.pack(chartmod.load(path))
    Path(destination).mkdir(parents=True, exist_ok=True)
    target = archive.write(destination)
    click.echo(f"Packaged {target} (sha256:{archive.digest})")
    if sign:
        record = provenance.sign(archive, provenance.load_key(key_path))
        prov = provenance.write_provenance(record, target)
        click.echo(f"Signed {prov} (signer {record.signer_id})")


# -- repositories ------------------------------------------------------------


@cli.group()
def repo() -> None:
    """Work with chart repositories."""


@repo.command("index")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--url", help="Absolute base URL for entry urls.")
def repo_index(directory: str, url: str | None) -> None:
    """(Re)generate DIRECTORY/index.yaml."""
    index = repository.generate_index(directory, url)
    count = sum(len(v) for v in index.entries.values())
    click.echo(f"Indexed {count} chart version(s) in {Path(directory) / repository.INDEX_FILE}")
    for name, reason in sorted(index.failures.items()):
        click.echo(f"Error: {name}: {reason}", err=True)
    if index.failures:
        raise click.exceptions.Exit(1)


@repo.command("add")
@click.argument("alias")
@click.argument("url")
def repo_add(alias: str, url: str) -> None:
    """Register repository URL under ALIAS and fetch its index."""
    ref = repository.RepoRef(alias, url)
    repository.fetch_index(ref)
    config = repository.RepositoryConfig.load()
    config.add(ref)
    config.save()
    click.echo(f"Added repository {alias} ({url})")


@repo.command("list")
@OUTPUT
def repo_list(output: str) -> None:
    """List configured repositories."""
    repos = repository.RepositoryConfig.load().repositories
    if output == "json":
        _json([{"alias": r.alias, "url": r.url} for r in repos])
    else:
        _table([(r.alias, r.url) for r in repos], ("ALIAS", "URL"))


@repo.command("update")
def repo_update() -> None:
    """Refresh the cached index of every configured repository."""
    for ref in repository.RepositoryConfig.load().repositories:
        repository.fetch_index(ref)
        click.echo(f"Updated {ref.alias}")


@repo.command("serve")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--listen", default="127.0.0.1:8879", show_default=True, help="host:port to bind.")
def repo_serve(directory: str, listen: str) -> None:
    """Serve a repository directory over HTTP until interrupted."""
    host, port = _host_port(listen)
    server = repository.RepositoryServer(directory, host, port)
    click.echo(f"Serving {directory} at {server.url}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.httpd.server_close()


@cli.command()
@click.argument("query", default="")
@OUTPUT
def search(query: str, output: str) -> None:
    """Search configured repositories by name or description."""
    pairs = [(r.alias, repository.cached_index(r)) for r in repository.RepositoryConfig.load().repositories]
    rows = repository.search(pairs, query)
    if output == "json":
        _json([{"repository": a, "name": e.name, "version": e.version, "description": e.description} for a, e in rows])
    else:
        _table([(f"{a}/{e.name}", e.version, e.description) for a, e in rows], ("NAME", "VERSION", "DESCRIPTION"))


# -- releases ----------------------------------------------------------------


def _release_options(f):
    for decorator in reversed(
        [
            _namespace_option(),
            click.option("-f", "--values", "values_files", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Values file (repeatable)."),
            click.option("--set", "set_pairs", multiple=True, help="k.path=value[,k=v] override (repeatable)."),
            click.option("--post-render", "post_render", type=click.Path(exists=True, dir_okay=False), help="Executable that rewrites the manifest stream."),
            click.option("--verify", is_flag=True, help="Verify the archive's provenance before installing."),
            click.option("--trusted-key", "trusted_keys", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Public key to trust (repeatable)."),
            click.option("--version", "version", help="Version constraint for repository references."),
            CLUSTER_URL,
        ]
    ):
        f = decorator(f)
    return f


def _prepare_install(chart_ref, version, values_files, set_pairs, post_render, verify, trusted_keys):
    source, record = resolve_chart_ref(chart_ref, version)
    opts = InstallOptions(
        verify=verify,
        trusted_keys=[provenance.load_key(k) for k in trusted_keys],
        provenance=record,
        post_renderer=os.path.abspath(post_render) if post_render else None,
    )
    if verify:
        verify_source(source, opts)
    chart = _loaded(source)
    values = merge_values(chart.default_values, values_files, set_pairs)
    return (source if verify else chart), values, opts


@cli.command()
@click.argument("release")
@click.argument("chart_ref")
@_release_options
def install(release, chart_ref, namespace, values_files, set_pairs, post_render, verify, trusted_keys, version, cluster_url):
    """Install CHART_REF as RELEASE."""
    source, values, opts = _prepare_install(chart_ref, version, values_files, set_pairs, post_render, verify, trusted_keys)
    rel = _manager(cluster_url).install(source, values, release, namespace, opts)
    rev = rel.latest
    click.echo(f"Installed {release} in {namespace}: revision {rev.number} {rev.status} ({len(rev.manifests)} resources)")


@cli.command()
@click.argument("release")
@click.argument("chart_ref")
@_release_options
def upgrade(release, chart_ref, namespace, values_files, set_pairs, post_render, verify, trusted_keys, version, cluster_url):
    """Upgrade RELEASE to CHART_REF."""
    source, values, opts = _prepare_install(chart_ref, version, values_files, set_pairs, post_render, verify, trusted_keys)
    rel = _manager(cluster_url).upgrade(release, namespace, source, values, opts)
    rev = rel.latest
    click.echo(f"Upgraded {release} in {namespace}: revision {rev.number} {rev.status}")


@cli.command()
@click.argument("release")
@click.argument("revision", type=click.IntRange(min=1))
@_namespace_option()
@CLUSTER_URL
def rollback(release: str, revision: int, namespace: str, cluster_url: str) -> None:
    """Roll RELEASE back to REVISION."""
    rel = _manager(cluster_url).rollback(release, namespace, revision)
    click.echo(f"Rolled back {release} to revision {revision}: now revision {rel.latest.number}")


@cli.command()
@click.argument("release")
@_namespace_option()
@click.option("--purge", is_flag=True, help="Also delete the stored release history.")
@CLUSTER_URL
def uninstall(release: str, namespace: str, purge: bool, cluster_url: str) -> None:
    """Remove RELEASE and all of its resources."""
    manager = _manager(cluster_url)
    manager.uninstall(release, namespace)
    if purge:
        manager.purge(release, namespace)
    click.echo(f"Uninstalled {release} from {namespace}")


@cli.command()
@click.argument("release")
@_namespace_option()
@OUTPUT
@CLUSTER_URL
def history(release: str, namespace: str, output: str, cluster_url: str) -> None:
    """Show the revision history of RELEASE."""
    revisions = _manager(cluster_url).history(release, namespace)
    if output == "json":
        _json([asdict(r) for r in revisions])
    else:
        _table(
            [(r.revision, r.status, f"{r.chart}-{r.chart_version}", r.timestamp, r.note or "") for r in revisions],
            ("REVISION", "STATUS", "CHART", "UPDATED", "NOTE"),
        )


@cli.command("list")
@_namespace_option(default=None)
@OUTPUT
@CLUSTER_URL
def list_cmd(namespace: str | None, output: str, cluster_url: str) -> None:
    """List installed releases (all namespaces unless -n is given)."""
    rows = _manager(cluster_url).list_releases(namespace)
    if output == "json":
        _json([asdict(r) for r in rows])
    else:
        _table(
            [(r.name, r.namespace, r.revision.revision, r.revision.status, f"{r.revision.chart}-{r.revision.chart_version}") for r in rows],
            ("NAME", "NAMESPACE", "REVISION", "STATUS", "CHART"),
        )


# -- provenance --------------------------------------------------------------


@cli.command()
@click.argument("archive", type=click.Path(exists=True, dir_okay=False))
@click.option("--trusted-key", "trusted_keys", multiple=True, type=click.Path(exists=True, dir_okay=False), help="Public key to trust (repeatable).")
@OUTPUT
def verify(archive: str, trusted_keys: tuple[str, ...], output: str) -> None:
    """Check ARCHIVE against its .prov sidecar."""
    result = provenance.verify(
        chartmod.ChartArchive.from_path(archive),
        provenance.read_provenance(archive),
        [provenance.load_key(k) for k in trusted_keys],
    )
    if output == "json":
        _json(asdict(result))
    else:
        click.echo(f"Verified {archive}: {result.chart_name} {result.chart_version} signed by {result.signer_id}")


@cli.command()
@click.argument("path", type=click.Path(dir_okay=False))
def keygen(path: str) -> None:
    """Create PATH.key (private) and PATH.pub (public)."""
    key = provenance.KeyPair.generate()
    priv, pub = provenance.write_keypair(key, path)
    click.echo(f"Wrote {priv} and {pub} (fingerprint {key.fingerprint})")


# -- mock control plane ------------------------------------------------------


def _host_port(listen: str) -> tuple[str, int]:
    host, sep, port = listen.rpartition(":")
    if not sep or not port.isdigit():
        raise click.BadParameter(f"expected host:port, got {listen!r}", param_hint="--listen")
    return host or "127.0.0.1", int(port)


@cli.command("mock-server")
@click.option("--listen", default="127.0.0.1:8080", show_default=True, help="host:port to bind.")
@click.option("--snapshot", type=click.Path(dir_okay=False), help="Write store and event log here on shutdown.")
def mock_server(listen: str, snapshot: str | None) -> None:
    """Run the in-memory mock control plane."""
    from charter.gateway.server import serve

    host, port = _host_port(listen)
    serve(host, port, snapshot)


def main(argv: Sequence[str] | None = None) -> int:
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        result = cli.main(args=args, prog_name="charter", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        if exc.ctx is not None:
            click.echo(exc.ctx.get_help(), err=True)
            click.echo("", err=True)
        click.echo(f"Error: {exc.format_message()}", err=True)
        return 2
    except click.Abort:
        click.echo("Aborted.", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except CharterError as exc:
        click.echo(f"Error: {exc.name}: {exc}", err=True)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(main())
