"""File formats: tab-separated analysis tables and the packed draws file.

Text formats (all tab-separated with a header row):

panel            marker_id  chrom  position  p_a0  p_b0
genotypes        subject_id  <marker ...>          cells 0/1/2/NA
phenotypes       subject_id  trait  <covariate ...>  NA allowed, row dropped
stage-1 table    locus_id  chrom  position  index  log10_bf  selected  n_imputations  flag
stage-2 table    rank  locus_ids  log10_bf  reported
ALD matrix       marker_id  <marker ...>

Panel positions are Morgans by default; a unit flag converts centimorgan or
megabase inputs (megabases via a user-supplied cM/Mb factor, recorded in
the run manifest).

The draws file is binary: magic, version, dimensions and seed, subject and
marker metadata, the ancestry draws packed two bits per value, parameter
traces as raw float blocks, and a trailing CRC32 of everything before it.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib

import numpy as np

from .errors import AlignmentError, DataFormatError, DrawsFileError
from .glm import TraitData
from .hmm import MISSING, AimPanel, AncestryDraws, GenotypeMatrix

log = logging.getLogger(__name__)

DRAWS_MAGIC = b"ADXDRAWS"
DRAWS_VERSION = 1
POSITION_UNITS = ("morgans", "centimorgans", "mb")

_FMT = "%.10g"


def _fmt(value):
    return _FMT % value


def _split_header(line, path, expected_prefix):
    cols = line.rstrip("\n").split("\t")
    for k, name in enumerate(expected_prefix):
        if k >= len(cols) or cols[k] != name:
            raise DataFormatError(
                f"{path}:1: expected column {k + 1} to be {name!r}, "
                f"found {cols[k] if k < len(cols) else 'nothing'!r}"
            )
    return cols


# --- panel -------------------------------------------------------------------


def read_panel(path, position_unit="morgans", cm_per_mb=1.0) -> AimPanel:
    if position_unit not in POSITION_UNITS:
        raise ValueError(f"position_unit must be one of {POSITION_UNITS}")
    marker_ids, chrom, position, p_a0, p_b0 = [], [], [], [], []
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataFormatError(f"{path}:1: empty panel file")
        _split_header(header, path, ["marker_id", "chrom", "position", "p_a0", "p_b0"])
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != 5:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 5 columns, found {len(cells)}"
                )
            marker_ids.append(cells[0])
            for name, value, target in (
                ("chrom", cells[1], chrom),
                ("position", cells[2], position),
                ("p_a0", cells[3], p_a0),
                ("p_b0", cells[4], p_b0),
            ):
                try:
                    target.append(int(value) if name == "chrom" else float(value))
                except ValueError as exc:
                    raise DataFormatError(
                        f"{path}:{lineno}: column {name!r}: "
                        f"cannot parse {value!r}"
                    ) from exc
    position = np.asarray(position)
    if position_unit == "centimorgans":
        position = position / 100.0
    elif position_unit == "mb":
        position = position * cm_per_mb / 100.0
    return AimPanel(
        marker_ids=marker_ids,
        chrom=np.asarray(chrom),
        position=position,
        p_a0=np.asarray(p_a0),
        p_b0=np.asarray(p_b0),
    )


def write_panel(panel: AimPanel, path):
    with open(path, "w") as fh:
        fh.write("marker_id\tchrom\tposition\tp_a0\tp_b0\n")
        for j in range(panel.n_loci):
            fh.write(
                "\t".join(
                    [
                        panel.marker_ids[j],
                        str(int(panel.chrom[j])),
                        _fmt(panel.position[j]),
                        _fmt(panel.p_a0[j]),
                        _fmt(panel.p_b0[j]),
                    ]
                )
                + "\n"
            )


# --- genotypes ---------------------------------------------------------------


def read_genotypes(path):
    """Returns (GenotypeMatrix, marker_ids from the header)."""
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataFormatError(f"{path}:1: empty genotype file")
        cols = _split_header(header, path, ["subject_id"])
        marker_ids = cols[1:]
        if not marker_ids:
            raise DataFormatError(f"{path}:1: no marker columns")
        subject_ids = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(marker_ids) + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(marker_ids) + 1} columns, "
                    f"found {len(cells)}"
                )
            subject_ids.append(cells[0])
            row = np.empty(len(marker_ids), dtype=np.int8)
            for k, cell in enumerate(cells[1:]):
                if cell == "NA":
                    row[k] = MISSING
                elif cell in ("0", "1", "2"):
                    row[k] = int(cell)
                else:
                    raise DataFormatError(
                        f"{path}:{lineno}: marker {marker_ids[k]!r}, subject "
                        f"{cells[0]!r}: invalid genotype {cell!r}"
                    )
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no subject rows")
    return GenotypeMatrix(x=np.vstack(rows), subject_ids=subject_ids), marker_ids


def write_genotypes(genotypes: GenotypeMatrix, marker_ids, path):
    with open(path, "w") as fh:
        fh.write("subject_id\t" + "\t".join(marker_ids) + "\n")
        for i, sid in enumerate(genotypes.subject_ids):
            cells = [
                "NA" if v == MISSING else str(int(v)) for v in genotypes.x[i]
            ]
            fh.write(sid + "\t" + "\t".join(cells) + "\n")


def align_genotypes_to_panel(genotypes: GenotypeMatrix, marker_ids, panel: AimPanel):
    """Reorder genotype columns into panel order; ids must match as sets."""
    if list(marker_ids) == list(panel.marker_ids):
        return genotypes
    by_id = {m: k for k, m in enumerate(marker_ids)}
    missing = [m for m in panel.marker_ids if m not in by_id]
    extra = [m for m in marker_ids if m not in set(panel.marker_ids)]
    if missing or extra:
        offenders = (missing + extra)[:10]
        raise AlignmentError(
            f"genotype markers do not match the panel; first offenders: {offenders}"
        )
    order = [by_id[m] for m in panel.marker_ids]
    return GenotypeMatrix(
        x=genotypes.x[:, order], subject_ids=genotypes.subject_ids
    )


# --- phenotypes --------------------------------------------------------------


def read_phenotypes(path, trait_kind, covariates=None):
    """Returns (subject_ids, TraitData) after listwise deletion of NA rows."""
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataFormatError(f"{path}:1: empty phenotype file")
        cols = _split_header(header, path, ["subject_id", "trait"])
        available = cols[2:]
        if covariates is None:
            covariates = available
        else:
            unknown = [c for c in covariates if c not in available]
            if unknown:
                raise DataFormatError(
                    f"{path}: covariate columns not present: {unknown}"
                )
        take = [cols.index(c) for c in covariates]
        subject_ids, y, e = [], [], []
        dropped = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(cols):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(cols)} columns, "
                    f"found {len(cells)}"
                )
            wanted = [cells[1]] + [cells[k] for k in take]
            if any(v == "NA" for v in wanted):
                dropped += 1
                continue
            try:
                values = [float(v) for v in wanted]
            except ValueError as exc:
                raise DataFormatError(
                    f"{path}:{lineno}: cannot parse numeric value: {exc}"
                ) from exc
            subject_ids.append(cells[0])
            y.append(values[0])
            e.append(values[1:])
    if dropped:
        log.info("dropped %d phenotype rows with missing values", dropped)
    if not subject_ids:
        raise DataFormatError(f"{path}: no complete phenotype rows")
    trait = TraitData(
        y=np.asarray(y),
        kind=trait_kind,
        covariates=np.asarray(e).reshape(len(y), len(covariates)),
        covariate_names=list(covariates),
    )
    return subject_ids, trait, dropped


def write_phenotypes(subject_ids, trait: TraitData, path):
    names = trait.covariate_names or [
        f"e{k}" for k in range(trait.n_covariates)
    ]
    with open(path, "w") as fh:
        fh.write("\t".join(["subject_id", "trait"] + names) + "\n")
        for i, sid in enumerate(subject_ids):
            cells = [sid, _fmt(trait.y[i])] + [
                _fmt(v) for v in trait.covariates[i]
            ]
            fh.write("\t".join(cells) + "\n")


def align_trait_to_draws(draws: AncestryDraws, subject_ids, trait: TraitData):
    """Subset draws rows to the phenotyped subjects, in draws order."""
    if draws.subject_ids is None:
        if trait.n_subjects != draws.n_subjects:
            raise AlignmentError(
                "draws carry no subject ids and the phenotype row count "
                f"({trait.n_subjects}) does not match ({draws.n_subjects})"
            )
        return draws, trait
    have = {s: k for k, s in enumerate(subject_ids)}
    extra = [s for s in subject_ids if s not in set(draws.subject_ids)]
    if extra:
        raise AlignmentError(
            f"phenotype subjects missing from draws; first offenders: {extra[:10]}"
        )
    keep = [i for i, s in enumerate(draws.subject_ids) if s in have]
    if not keep:
        raise AlignmentError("no overlap between draws and phenotype subjects")
    if len(keep) < draws.n_subjects:
        log.info(
            "scanning %d of %d subjects with complete phenotypes",
            len(keep),
            draws.n_subjects,
        )
    order = [have[draws.subject_ids[i]] for i in keep]
    subset = AncestryDraws(
        draws=draws.draws[:, keep, :],
        sweep_index=draws.sweep_index,
        traces=draws.traces,
        subject_ids=[draws.subject_ids[i] for i in keep],
        marker_ids=draws.marker_ids,
        chrom=draws.chrom,
        position=draws.position,
        seed=draws.seed,
    )
    trait_sub = TraitData(
        y=trait.y[order],
        kind=trait.kind,
        covariates=trait.covariates[order],
        covariate_names=trait.covariate_names,
    )
    return subset, trait_sub


# --- packed draws file -------------------------------------------------------


def _pack_counts(values):
    flat = values.reshape(-1).astype(np.uint8)
    pad = (-flat.size) % 4
    if pad:
        flat = np.concatenate([flat, np.zeros(pad, dtype=np.uint8)])
    quads = flat.reshape(-1, 4)
    return (
        quads[:, 0]
        | (quads[:, 1] << 2)
        | (quads[:, 2] << 4)
        | (quads[:, 3] << 6)
    ).astype(np.uint8)


def _unpack_counts(packed, n_values):
    packed = np.frombuffer(packed, dtype=np.uint8)
    out = np.empty((packed.size, 4), dtype=np.int8)
    out[:, 0] = packed & 3
    out[:, 1] = (packed >> 2) & 3
    out[:, 2] = (packed >> 4) & 3
    out[:, 3] = (packed >> 6) & 3
    return out.reshape(-1)[:n_values]


def _write_str_list(out, items):
    out.append(struct.pack("<I", len(items)))
    for item in items:
        raw = str(item).encode()
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise DrawsFileError(f"{self.path}: truncated draws file")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str_list(self):
        (count,) = self.unpack("<I")
        items = []
        for _ in range(count):
            (length,) = self.unpack("<H")
            items.append(self.take(length).decode())
        return items


def save_draws(draws: AncestryDraws, path):
    out = [DRAWS_MAGIC, struct.pack("<H", DRAWS_VERSION)]
    seed = -1 if draws.seed is None else int(draws.seed)
    out.append(
        struct.pack(
            "<QQQq", draws.m, draws.n_subjects, draws.n_loci, seed
        )
    )
    out.append(struct.pack("<B", 1 if draws.traces else 0))
    out.append(draws.sweep_index.astype("<i8").tobytes())
    _write_str_list(out, draws.subject_ids or [])
    _write_str_list(out, draws.marker_ids or [])
    has_panel_meta = draws.chrom is not None and draws.position is not None
    out.append(struct.pack("<B", 1 if has_panel_meta else 0))
    if has_panel_meta:
        out.append(np.asarray(draws.chrom, dtype="<i8").tobytes())
        out.append(np.asarray(draws.position, dtype="<f8").tobytes())
    packed = _pack_counts(draws.draws)
    out.append(struct.pack("<Q", packed.size))
    out.append(packed.tobytes())
    if draws.traces:
        out.append(struct.pack("<I", len(draws.traces)))
        for name in sorted(draws.traces):
            arr = np.asarray(draws.traces[name], dtype="<f8")
            raw = name.encode()
            out.append(struct.pack("<H", len(raw)))
            out.append(raw)
            out.append(struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(arr.tobytes())
    payload = b"".join(out)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_draws(path) -> AncestryDraws:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(DRAWS_MAGIC) + 6:
        raise DrawsFileError(f"{path}: file too short to be a draws file")
    payload, crc_raw = blob[:-4], blob[-4:]
    (crc_stored,) = struct.unpack("<I", crc_raw)
    if zlib.crc32(payload) != crc_stored:
        raise DrawsFileError(f"{path}: checksum mismatch (corrupt or truncated)")
    r = _Reader(payload, path)
    if r.take(len(DRAWS_MAGIC)) != DRAWS_MAGIC:
        raise DrawsFileError(f"{path}: bad magic; not a draws file")
    (version,) = r.unpack("<H")
    if version != DRAWS_VERSION:
        raise DrawsFileError(
            f"{path}: unsupported draws version {version} "
            f"(this build reads {DRAWS_VERSION})"
        )
    m, n_sub, n_loc, seed = r.unpack("<QQQq")
    (has_traces,) = r.unpack("<B")
    sweep_index = np.frombuffer(r.take(8 * m), dtype="<i8").copy()
    subject_ids = r.str_list() or None
    marker_ids = r.str_list() or None
    (has_panel_meta,) = r.unpack("<B")
    chrom = position = None
    if has_panel_meta:
        chrom = np.frombuffer(r.take(8 * n_loc), dtype="<i8").copy()
        position = np.frombuffer(r.take(8 * n_loc), dtype="<f8").copy()
    (n_packed,) = r.unpack("<Q")
    draws = _unpack_counts(r.take(n_packed), m * n_sub * n_loc)
    traces = {}
    if has_traces:
        (n_traces,) = r.unpack("<I")
        for _ in range(n_traces):
            (name_len,) = r.unpack("<H")
            name = r.take(name_len).decode()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q")
            count = int(np.prod(shape))
            traces[name] = np.frombuffer(
                r.take(8 * count), dtype="<f8"
            ).copy().reshape(shape)
    return AncestryDraws(
        draws=draws.reshape(m, n_sub, n_loc),
        sweep_index=sweep_index,
        traces=traces,
        subject_ids=subject_ids,
        marker_ids=marker_ids,
        chrom=chrom,
        position=position,
        seed=None if seed == -1 else seed,
    )


# --- scan output tables ------------------------------------------------------


def write_stage1_table(result, draws, path):
    chrom = draws.chrom if draws.chrom is not None else None
    position = draws.position if draws.position is not None else None
    with open(path, "w") as fh:
        fh.write(
            "locus_id\tchrom\tposition\tindex\tlog10_bf\tselected\t"
            "n_imputations\tflag\n"
        )
        for row in result.stage1:
            j = row.index
            fh.write(
                "\t".join(
                    [
                        row.locus_id,
                        str(int(chrom[j])) if chrom is not None else "NA",
                        _fmt(position[j]) if position is not None else "NA",
                        str(j),
                        "NA" if np.isnan(row.log10_bf) else _fmt(row.log10_bf),
                        str(int(row.selected)),
                        str(row.n_imputations_used),
                        row.flag or "",
                    ]
                )
                + "\n"
            )


def write_stage2_table(result, path, reported=None):
    reported_ranks = {e.rank for e in (reported or [])}
    with open(path, "w") as fh:
        fh.write("rank\tlocus_ids\tlog10_bf\treported\n")
        for entry in result.stage2 or []:
            fh.write(
                "\t".join(
                    [
                        str(entry.rank),
                        ",".join(entry.locus_ids),
                        _fmt(entry.log10_bf),
                        str(int(entry.rank in reported_ranks)),
                    ]
                )
                + "\n"
            )


def write_ald_matrix(corr, marker_ids, path):
    marker_ids = marker_ids or [str(j) for j in range(corr.shape[0])]
    with open(path, "w") as fh:
        fh.write("marker_id\t" + "\t".join(marker_ids) + "\n")
        for j, mid in enumerate(marker_ids):
            fh.write(mid + "\t" + "\t".join(_fmt(v) for v in corr[j]) + "\n")


def write_rows_table(rows, path):
    """Write a list of homogeneous dicts as a TSV with sorted-key header."""
    if not rows:
        with open(path, "w") as fh:
            fh.write("\n")
        return
    keys = list(rows[0])
    with open(path, "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for row in rows:
            cells = [
                _fmt(row[k]) if isinstance(row[k], float) else str(row[k])
                for k in keys
            ]
            fh.write("\t".join(cells) + "\n")


# --- run manifest ------------------------------------------------------------


def write_manifest(path, command, config):
    from . import __version__

    record = {
        "tool": "admixscan",
        "version": __version__,
        "command": command,
        "config": config,
    }
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        record = json.load(fh)
    for key in ("tool", "command", "config"):
        if key not in record:
            raise DataFormatError(f"{path}: manifest missing {key!r}")
    return record
