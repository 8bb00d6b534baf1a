"""Operator command-line surface.

Exit codes: 0 success, 1 verification/authorization failure, 2 usage
error, 3 I/O error. Every subcommand prints machine-readable JSON to
stdout when --json is passed; --now injects the clock for reproducible
runs. The secret key path may come from the PAM_KEY_FILE environment
variable instead of --key.
"""

from __future__ import annotations

import json
import os
import sys
from datetime import datetime, timedelta
from pathlib import Path

import click

from . import report as report_mod
from .capability import (
    Permission,
    RevocationList,
    ScopeExpression,
    issue_token,
    token_from_record,
    validate_scope,
)
from .canonical import canonical_bytes, parse_json
from .errors import CapabilityError, PamError
from .evalharness import (
    MUTATION_KINDS,
    load_attack_corpus,
    run_attack_battery,
    run_mutation_trials,
)
from .keys import (
    KEY_PATH_ENV,
    KeyRegistry,
    generate_keypair,
    load_secret_key,
    save_secret_key,
)
from .model import (
    COMPONENTS,
    Components,
    MemoryArtifact,
    SourceAgent,
    artifact_from_record,
    entry_from_record,
    validate_envelope,
)
from .provenance import (
    ancestor_closure,
    compute_entry_id,
    entry_id_for,
    redact_entry,
    selective_disclose,
    sign_artifact,
    verify_artifact,
)
from .rehydrate import RehydrationConfig, TaskContext, rehydrate
from .serialization import (
    WireFormat,
    encode_artifact,
    format_for_path,
    read_artifact,
    write_artifact,
)
from .server import build_rehydrate_payload, build_verify_payload, make_server, render_json
from .timestamps import format_timestamp, now_utc, parse_timestamp

EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _parse_now(value: str | None) -> datetime:
    if value is None:
        return now_utc()
    try:
        return parse_timestamp(value)
    except ValueError as exc:
        raise click.UsageError(f"--now: {exc}") from None


def _parse_duration(value: str) -> timedelta:
    units = {"s": 1, "m": 60, "h": 3600, "d": 86400}
    try:
        if value and value[-1] in units:
            return timedelta(seconds=float(value[:-1]) * units[value[-1]])
        return timedelta(seconds=float(value))
    except ValueError:
        raise click.UsageError(f"--ttl: cannot parse duration {value!r}") from None


def _load_key(key_path: str | None):
    path = key_path or os.environ.get(KEY_PATH_ENV)
    if not path:
        raise click.UsageError(f"no --key given and {KEY_PATH_ENV} is not set")
    try:
        return load_secret_key(path)
    except OSError as exc:
        _io_fail(exc)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None


def _load_registry(path: str) -> KeyRegistry:
    try:
        return KeyRegistry.load(path)
    except OSError as exc:
        _io_fail(exc)


def _load_revocations(path: str | None) -> RevocationList:
    if path is None or not Path(path).exists():
        return RevocationList()
    try:
        return RevocationList.from_record(json.loads(Path(path).read_text()))
    except OSError as exc:
        _io_fail(exc)


def _read_artifact(path: str) -> MemoryArtifact:
    try:
        artifact, _ = read_artifact(path)
        return artifact
    except OSError as exc:
        _io_fail(exc)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)


def _io_fail(exc: OSError) -> None:
    click.echo(f"i/o error: {exc}", err=True)
    sys.exit(EXIT_IO)


def _emit(payload: dict, as_json: bool, human: str | None = None) -> None:
    if as_json:
        click.echo(render_json(payload), nl=False)
    elif human is not None:
        click.echo(human)


@click.group()
@click.version_option(package_name="pamkit")
def main() -> None:
    """Portable agent memory toolkit."""


# ---------------------------------------------------------------------------
# keygen
# ---------------------------------------------------------------------------


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path(), help="Secret key file.")
@click.option("--registry", "registry_path", type=click.Path(),
              help="Registry JSON to add the public key to (created if missing).")
@click.option("--label", default="", help="Registry label for the key.")
@click.option("--json", "as_json", is_flag=True)
def keygen(out_path: str, registry_path: str | None, label: str, as_json: bool) -> None:
    """Generate an Ed25519 keypair and print its key id."""
    key = generate_keypair()
    try:
        save_secret_key(out_path, key)
        if registry_path:
            if Path(registry_path).exists():
                registry = KeyRegistry.load(registry_path)
            else:
                registry = KeyRegistry()
            registry.add(key.public_key, label)
            registry.save(registry_path)
    except OSError as exc:
        _io_fail(exc)
    _emit(
        {"key_id": key.key_id, "public_key_hex": key.public_key.hex(), "secret_key_path":
         str(out_path)},
        as_json,
        key.key_id,
    )


# ---------------------------------------------------------------------------
# create
# ---------------------------------------------------------------------------


def _apply_filters(
    records: dict[str, list[dict]],
    since: datetime | None,
    until: datetime | None,
    tags: tuple[str, ...],
) -> dict[str, list[dict]]:
    """Time and tag filters with cascading exclusion of dependents.

    Entries without tags are excluded by tag filters and included by
    time filters.
    """
    excluded_refs: set[str] = set()

    def keeps(record: dict) -> bool:
        created = record.get("created_at")
        if since or until:
            if created:
                stamp = parse_timestamp(created)
                if since and stamp < since:
                    return False
                if until and stamp > until:
                    return False
        if tags:
            have = set(record.get("tags", []))
            if not set(tags) <= have:
                return False
        if excluded_refs & set(record.get("parent_refs", [])):
            return False
        if excluded_refs & set(record.get("source_event_refs", [])):
            return False
        return True

    filtered: dict[str, list[dict]] = {}
    for component in COMPONENTS:
        kept = []
        for record in records.get(component, []):
            if keeps(record):
                kept.append(record)
            elif record.get("ref"):
                excluded_refs.add(record["ref"])
        filtered[component] = kept
    return filtered


def _build_entries(
    records: dict[str, list[dict]], now: datetime
) -> Components:
    """Resolve ref-based parent links and compute content addresses.

    Refs may be declared in any component order; resolution iterates
    until it stops making progress.
    """
    pending: list[tuple[str, dict]] = [
        (component, dict(record))
        for component in COMPONENTS
        for record in records.get(component, [])
    ]
    ids_by_ref: dict[str, str] = {}
    built: dict[str, list] = {name: [] for name in COMPONENTS}
    default_stamp = format_timestamp(now)

    while pending:
        progressed = False
        deferred = []
        for component, record in pending:
            refs = list(record.get("parent_refs", []))
            source_refs = list(record.get("source_event_refs", []))
            if any(r not in ids_by_ref for r in refs + source_refs):
                deferred.append((component, record))
                continue
            fields = {
                k: v for k, v in record.items()
                if k not in ("ref", "parent_refs", "source_event_refs")
            }
            parent_ids = list(fields.get("parent_ids", []))
            parent_ids += [ids_by_ref[r] for r in refs]
            source_ids = list(fields.get("source_event_ids", []))
            source_ids += [ids_by_ref[r] for r in source_refs]
            for source in source_ids:
                if source not in parent_ids:
                    parent_ids.append(source)
            fields["parent_ids"] = parent_ids
            if component == "semantic":
                fields["source_event_ids"] = source_ids
            fields.setdefault("created_at", default_stamp)
            fields.setdefault("version", "1.0")
            fields["id"] = compute_entry_id(fields)
            entry = entry_from_record(fields, component, path=component)
            built[component].append(entry)
            if record.get("ref"):
                ids_by_ref[record["ref"]] = entry.id
            progressed = True
        pending = deferred
        if pending and not progressed:
            unresolved = sorted(
                {r for _, rec in pending
                 for r in list(rec.get("parent_refs", [])) + list(rec.get("source_event_refs", []))
                 if r not in ids_by_ref}
            )
            raise click.UsageError(f"unresolvable refs: {', '.join(unresolved)}")
    return Components(**{name: tuple(entries) for name, entries in built.items()})


@main.command()
@click.option("--entries", "entries_path", required=True, type=click.Path(exists=True),
              help="JSON file: {component: [entry fields...]}, with optional ref/parent_refs.")
@click.option("--key", "key_path", type=click.Path(), help=f"Secret key (or ${KEY_PATH_ENV}).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--format", "format_name", type=click.Choice(["json", "cbor"]))
@click.option("--source-name", default="pamkit-agent")
@click.option("--source-model", default="unspecified")
@click.option("--source-runtime", default="pamkit")
@click.option("--since", help="Keep entries created at or after this timestamp.")
@click.option("--until", help="Keep entries created at or before this timestamp.")
@click.option("--tag", "tags", multiple=True,
              help="Keep only entries carrying every named tag (repeatable).")
@click.option("--now", "now_text", help="Clock override (RFC 3339 UTC).")
@click.option("--json", "as_json", is_flag=True)
def create(entries_path: str, key_path: str | None, out_path: str, format_name: str | None,
           source_name: str, source_model: str, source_runtime: str, since: str | None,
           until: str | None, tags: tuple[str, ...], now_text: str | None,
           as_json: bool) -> None:
    """Build and sign an artifact from an entries JSON file."""
    now = _parse_now(now_text)
    key = _load_key(key_path)
    try:
        records = json.loads(Path(entries_path).read_text())
    except OSError as exc:
        _io_fail(exc)
    except json.JSONDecodeError as exc:
        click.echo(f"error: entries file is not JSON: {exc}", err=True)
        sys.exit(EXIT_FAILURE)

    token_records = records.pop("capability_tokens", []) if isinstance(records, dict) else []
    unknown = set(records) - set(COMPONENTS)
    if unknown:
        raise click.UsageError(f"unknown components in entries file: {sorted(unknown)}")
    records = _apply_filters(
        records,
        parse_timestamp(since) if since else None,
        parse_timestamp(until) if until else None,
        tags,
    )
    try:
        components = _build_entries(records, now)
        tokens = tuple(token_from_record(r) for r in token_records)
        artifact = MemoryArtifact(
            pam_version="1.0", schema_version="1.0", created_at=format_timestamp(now),
            source_agent=SourceAgent(source_name, source_model, source_runtime),
            root_hash="", signature="", signing_key_id="",
            capability_tokens=tokens, components=components,
        )
        envelope = validate_envelope(artifact)
        if not envelope.ok:
            _emit({"report_version": "1", "kind": "create", "ok": False,
                   "envelope": envelope.to_record()}, as_json,
                  "invalid: " + ", ".join(envelope.codes()))
            sys.exit(EXIT_FAILURE)
        artifact = sign_artifact(artifact, key)
        fmt = WireFormat(format_name) if format_name else None
        written = write_artifact(artifact, out_path, fmt)
    except OSError as exc:
        _io_fail(exc)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _emit(
        {"report_version": "1", "kind": "create", "ok": True, "path": str(out_path),
         "format": written.value, "entries": artifact.components.entry_count(),
         "root_hash": artifact.root_hash},
        as_json,
        f"wrote {artifact.components.entry_count()} entries to {out_path} "
        f"({written.value}), root {artifact.root_hash}",
    )


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@main.command()
@click.argument("artifact_path", type=click.Path(exists=True))
@click.option("--registry", "registry_path", required=True, type=click.Path(exists=True))
@click.option("--entry", "entry_id", help="Verify one entry's ancestor closure only.")
@click.option("--with-signature", is_flag=True,
              help="With --entry: also check the root signature.")
@click.option("--json", "as_json", is_flag=True)
def verify(artifact_path: str, registry_path: str, entry_id: str | None,
           with_signature: bool, as_json: bool) -> None:
    """Run three-phase verification and report every failure."""
    artifact = _read_artifact(artifact_path)
    registry = _load_registry(registry_path)

    if entry_id is not None:
        try:
            closure = ancestor_closure(artifact, [entry_id])
        except PamError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_FAILURE)
        mismatched = sorted(
            entry.id for _, entry in artifact.components.all_entries()
            if entry.id in closure and entry_id_for(entry) != entry.id
            and not hasattr(entry, "redaction_token")
        )
        ok = not mismatched
        payload = {
            "report_version": "1", "kind": "verify-entry", "entry": entry_id,
            "closure_size": len(closure), "hash_failures": mismatched, "ok": ok,
        }
        if with_signature:
            verification = verify_artifact(artifact, registry)
            payload["verification"] = verification.to_record()
            payload["ok"] = ok and verification.phase3_ok
        _emit(payload, as_json,
              f"entry closure of {len(closure)}: {'ok' if payload['ok'] else 'FAILED'}")
        sys.exit(0 if payload["ok"] else EXIT_FAILURE)

    payload = build_verify_payload(artifact, registry)
    verification = payload["verification"]
    lines = [
        f"phase1 (entry hashes): {'ok' if verification['phase1_ok'] else 'FAILED'}",
        f"phase2 (dag integrity): {'ok' if verification['phase2_ok'] else 'FAILED'}",
        f"phase3 (root signature): {'ok' if verification['phase3_ok'] else 'FAILED'}",
        f"envelope: {'ok' if payload['envelope']['ok'] else 'FAILED'}",
        f"verified entries: {verification['verified_entry_count']}",
    ]
    for failure in verification["failures"]:
        lines.append(f"  phase{failure['phase']} {failure['subject']}: {failure['code']}")
    for violation in payload["envelope"]["violations"]:
        lines.append(f"  envelope {violation['path']}: {violation['code']}")
    _emit(payload, as_json, "\n".join(lines))
    sys.exit(0 if payload["ok"] else EXIT_FAILURE)


# ---------------------------------------------------------------------------
# token lifecycle
# ---------------------------------------------------------------------------


def _csv(value: str | None) -> tuple[str, ...]:
    return tuple(x.strip() for x in value.split(",") if x.strip()) if value else ()


@main.command("token-issue")
@click.option("--scope-type", required=True,
              type=click.Choice(["entry_list", "component", "tag_predicate", "wildcard"]))
@click.option("--entry-ids", help="Comma-separated entry ids (entry_list scope).")
@click.option("--components", "components_csv", help="Comma-separated components.")
@click.option("--any-of", help="Comma-separated tags (tag_predicate).")
@click.option("--all-of", help="Comma-separated tags (tag_predicate).")
@click.option("--none-of", help="Comma-separated tags (tag_predicate).")
@click.option("--permissions", required=True, help="Comma-separated permission names.")
@click.option("--issuer", required=True)
@click.option("--audience", required=True)
@click.option("--ttl", required=True, help="Lifetime: seconds or <n>[smhd].")
@click.option("--key", "key_path", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--now", "now_text")
@click.option("--json", "as_json", is_flag=True)
def token_issue(scope_type: str, entry_ids: str | None, components_csv: str | None,
                any_of: str | None, all_of: str | None, none_of: str | None,
                permissions: str, issuer: str, audience: str, ttl: str,
                key_path: str | None, out_path: str, now_text: str | None,
                as_json: bool) -> None:
    """Mint a signed capability token (.pamtoken)."""
    key = _load_key(key_path)
    now = _parse_now(now_text)
    scope = ScopeExpression(
        type=scope_type,
        entry_ids=_csv(entry_ids),
        components=_csv(components_csv),
        any_of=_csv(any_of),
        all_of=_csv(all_of),
        none_of=_csv(none_of),
    )
    try:
        validate_scope(scope)
        perms = set()
        for name in _csv(permissions):
            try:
                perms.add(Permission(name))
            except ValueError:
                raise click.UsageError(f"unknown permission {name!r}") from None
        token = issue_token(scope, perms, issuer, audience, _parse_duration(ttl), key, now=now)
    except CapabilityError as exc:
        raise click.UsageError(str(exc)) from None
    try:
        Path(out_path).write_bytes(canonical_bytes(token.to_record()))
    except OSError as exc:
        _io_fail(exc)
    _emit({"report_version": "1", "kind": "token-issue", "token": token.to_record(),
           "path": str(out_path)}, as_json,
          f"{token.id} -> {out_path} (expires {token.expires_at})")


@main.command("token-revoke")
@click.option("--token", "token_ref", required=True,
              help="Token file path or literal token id.")
@click.option("--revocations", "revocations_path", required=True, type=click.Path())
@click.option("--now", "now_text")
@click.option("--json", "as_json", is_flag=True)
def token_revoke(token_ref: str, revocations_path: str, now_text: str | None,
                 as_json: bool) -> None:
    """Add a token id to a revocation list file (created if missing)."""
    now = _parse_now(now_text)
    if Path(token_ref).exists():
        try:
            token = token_from_record(parse_json(Path(token_ref).read_bytes()))
            token_id = token.id
        except OSError as exc:
            _io_fail(exc)
        except PamError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_FAILURE)
    else:
        token_id = token_ref
    revocations = _load_revocations(revocations_path)
    updated = RevocationList(
        revoked=revocations.revoked | {token_id}, updated_at=format_timestamp(now)
    )
    try:
        Path(revocations_path).write_text(
            json.dumps(updated.to_record(), indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        _io_fail(exc)
    _emit({"report_version": "1", "kind": "token-revoke", "revoked": token_id,
           "total_revoked": len(updated.revoked)}, as_json,
          f"revoked {token_id} ({len(updated.revoked)} total)")


# ---------------------------------------------------------------------------
# disclose / redact
# ---------------------------------------------------------------------------


@main.command()
@click.argument("artifact_path", type=click.Path(exists=True))
@click.option("--ids", "ids_csv", help="Comma-separated entry ids to disclose.")
@click.option("--tag", "tags", multiple=True, help="Also select entries with every tag.")
@click.option("--since", help="Also require created_at >= this timestamp.")
@click.option("--until", help="Also require created_at <= this timestamp.")
@click.option("--key", "key_path", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--registry", "registry_path", type=click.Path(exists=True),
              help="Verify the source fully (including signature) first.")
@click.option("--now", "now_text")
@click.option("--json", "as_json", is_flag=True)
def disclose(artifact_path: str, ids_csv: str | None, tags: tuple[str, ...],
             since: str | None, until: str | None, key_path: str | None, out_path: str,
             registry_path: str | None, now_text: str | None, as_json: bool) -> None:
    """Export selected entries plus their ancestor closure, re-signed."""
    artifact = _read_artifact(artifact_path)
    key = _load_key(key_path)
    now = _parse_now(now_text)

    selected = set(_csv(ids_csv))
    if tags or since or until:
        since_dt = parse_timestamp(since) if since else None
        until_dt = parse_timestamp(until) if until else None
        for _, entry in artifact.components.all_entries():
            if tags and not set(tags) <= set(getattr(entry, "tags", ())):
                continue
            stamp = parse_timestamp(entry.created_at)
            if since_dt and stamp < since_dt:
                continue
            if until_dt and stamp > until_dt:
                continue
            selected.add(entry.id)
    if not selected:
        raise click.UsageError("nothing selected: pass --ids and/or filters")

    registry = _load_registry(registry_path) if registry_path else None
    try:
        disclosed = selective_disclose(artifact, sorted(selected), key,
                                       registry=registry, now=now)
        written = write_artifact(disclosed, out_path)
    except OSError as exc:
        _io_fail(exc)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _emit({"report_version": "1", "kind": "disclose", "path": str(out_path),
           "format": written.value, "requested": sorted(selected),
           "entries": disclosed.components.entry_count(),
           "disclosed_from": disclosed.disclosed_from}, as_json,
          f"disclosed {disclosed.components.entry_count()} entries to {out_path}")


@main.command()
@click.argument("artifact_path", type=click.Path(exists=True))
@click.option("--id", "entry_id", required=True, help="Entry id to redact.")
@click.option("--key", "key_path", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def redact(artifact_path: str, entry_id: str, key_path: str | None, out_path: str,
           as_json: bool) -> None:
    """Replace an entry's content with a redaction token, re-signed."""
    artifact = _read_artifact(artifact_path)
    key = _load_key(key_path)
    try:
        redacted = redact_entry(artifact, entry_id, key)
        written = write_artifact(redacted, out_path)
    except OSError as exc:
        _io_fail(exc)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    _emit({"report_version": "1", "kind": "redact", "path": str(out_path),
           "format": written.value, "entry": entry_id}, as_json,
          f"redacted {entry_id} -> {out_path}")


# ---------------------------------------------------------------------------
# rehydrate
# ---------------------------------------------------------------------------


@main.command("rehydrate")
@click.argument("artifact_path", type=click.Path(exists=True))
@click.option("--context", "context_text", default="", help="Target task description.")
@click.option("--context-file", type=click.Path(exists=True))
@click.option("--budget", default=4096, show_default=True, help="Token budget.")
@click.option("--style", type=click.Choice(["structured", "narrative"]),
              default="structured", show_default=True)
@click.option("--model-profile", default="default", show_default=True)
@click.option("--tokens", "token_paths", multiple=True, type=click.Path(exists=True),
              help="Capability token files (repeatable).")
@click.option("--presenter", default="agent:local", show_default=True)
@click.option("--registry", "registry_path", required=True, type=click.Path(exists=True))
@click.option("--revocations", "revocations_path", type=click.Path())
@click.option("--allow-unscoped", is_flag=True,
              help="Operator bypass of capability filtering (logged).")
@click.option("--now", "now_text")
@click.option("--json", "as_json", is_flag=True)
def rehydrate_cmd(artifact_path: str, context_text: str, context_file: str | None,
                  budget: int, style: str, model_profile: str,
                  token_paths: tuple[str, ...], presenter: str, registry_path: str,
                  revocations_path: str | None, allow_unscoped: bool,
                  now_text: str | None, as_json: bool) -> None:
    """Run the full pipeline and print injection-safe context text.

    Place the output after the system prompt and before user-controlled
    content.
    """
    if context_file and context_text:
        raise click.UsageError("--context and --context-file are mutually exclusive")
    if context_file:
        try:
            context_text = Path(context_file).read_text()
        except OSError as exc:
            _io_fail(exc)
    artifact = _read_artifact(artifact_path)
    registry = _load_registry(registry_path)
    revocations = _load_revocations(revocations_path)
    tokens = []
    for path in token_paths:
        try:
            tokens.append(token_from_record(parse_json(Path(path).read_bytes())))
        except OSError as exc:
            _io_fail(exc)
        except PamError as exc:
            click.echo(f"error: {path}: {exc}", err=True)
            sys.exit(EXIT_FAILURE)
    now = _parse_now(now_text)
    try:
        cfg = RehydrationConfig(token_budget=budget, format_style=style,
                                model_profile=model_profile)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from None
    try:
        result = rehydrate(artifact, tokens, presenter, TaskContext(context_text, now),
                           cfg, registry, revocations, allow_unscoped=allow_unscoped)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    for warning in result.warnings:
        click.echo(f"warning: {warning}", err=True)
    if as_json:
        click.echo(render_json(build_rehydrate_payload(result)), nl=False)
    else:
        click.echo(result.framed_text)
    sys.exit(0 if result.ok else EXIT_FAILURE)


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------


@main.command()
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True)
def convert(input_path: str, out_path: str, as_json: bool) -> None:
    """Transcode .pam <-> .pam.cbor, asserting structural equality."""
    artifact = _read_artifact(input_path)
    target = format_for_path(out_path)
    try:
        data = encode_artifact(artifact, target)
        Path(out_path).write_bytes(data)
        reread, _ = read_artifact(out_path)
    except OSError as exc:
        _io_fail(exc)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    if reread != artifact:
        click.echo("error: round trip is not structurally identical", err=True)
        sys.exit(EXIT_FAILURE)
    _emit({"report_version": "1", "kind": "convert", "path": str(out_path),
           "format": target.value, "bytes": len(data)}, as_json,
          f"wrote {out_path} ({target.value}, {len(data)} bytes)")


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


@main.command("attack-test")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Attack corpus file (defaults to the bundled 200-pattern corpus).")
@click.option("--report", "report_path", type=click.Path(),
              help="Write a CSV report plus a PNG figure alongside it.")
@click.option("--budget", default=4096, show_default=True)
@click.option("--now", "now_text")
@click.option("--json", "as_json", is_flag=True)
def attack_test(corpus_path: str | None, report_path: str | None, budget: int,
                now_text: str | None, as_json: bool) -> None:
    """Run the injection battery; exit 0 only if nothing executed."""
    try:
        cases = load_attack_corpus(corpus_path)
    except OSError as exc:
        _io_fail(exc)
    now = _parse_now(now_text) if now_text else None
    battery = run_attack_battery(cases, now=now, budget=budget)
    payload = battery.to_record()
    if report_path:
        try:
            figure = report_mod.write_attack_report(battery, report_path)
        except OSError as exc:
            _io_fail(exc)
        payload["report_path"] = str(report_path)
        payload["figure_path"] = str(figure)
    lines = [
        f"{row['category']:22s} attempts={row['attempts']:3d} blocked={row['blocked']:3d} "
        f"escaped={row['escaped']:3d} executed={row['executed']:3d}"
        for row in battery.rows()
    ]
    lines.append(f"executed total: {battery.executed_total}/{len(cases)}")
    _emit(payload, as_json, "\n".join(lines))
    sys.exit(0 if battery.executed_total == 0 else EXIT_FAILURE)


@main.command("mutate-test")
@click.option("--artifact", "artifact_path", required=True, type=click.Path(exists=True))
@click.option("--trials", required=True, type=click.IntRange(min=1))
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--kind", type=click.Choice(list(MUTATION_KINDS)),
              help="Restrict trials to one mutation kind.")
@click.option("--registry", "registry_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", type=click.Path(),
              help="Write a CSV report plus a PNG figure alongside it.")
@click.option("--json", "as_json", is_flag=True)
def mutate_test(artifact_path: str, trials: int, seed: int, kind: str | None,
                registry_path: str, report_path: str | None, as_json: bool) -> None:
    """Seeded tamper trials; exit 0 only at 100% detection."""
    artifact = _read_artifact(artifact_path)
    registry = _load_registry(registry_path)
    try:
        result = run_mutation_trials(artifact, registry, trials, seed, kind)
    except PamError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    payload = result.to_record()
    if report_path:
        try:
            figure = report_mod.write_mutation_report(result, report_path)
        except OSError as exc:
            _io_fail(exc)
        payload["report_path"] = str(report_path)
        payload["figure_path"] = str(figure)
    human = (
        f"detected {result.detected}/{result.trials} "
        f"({result.detection_rate:.1%})"
    )
    _emit(payload, as_json, human)
    sys.exit(0 if result.detected == result.trials else EXIT_FAILURE)


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


@main.command()
@click.option("--artifact", "artifact_path", required=True, type=click.Path(exists=True))
@click.option("--registry", "registry_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8642, show_default=True, type=int)
def serve(artifact_path: str, registry_path: str, host: str, port: int) -> None:
    """Serve POST /verify, POST /rehydrate and GET /artifact locally."""
    registry = _load_registry(registry_path)
    httpd = make_server(artifact_path, registry, host, port)
    click.echo(f"serving on http://{host}:{port} (artifact: {artifact_path})", err=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()


if __name__ == "__main__":
    main()
