"""
JSONL persistence for corpora.

One sample per line, keys sorted, grids as dense integer codes. The
manifest lives beside the data as `<name>.manifest.json`. Both files are
written to a temporary name and renamed into place.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from corpus.samples import SAMPLE_TYPES, SCHEMA_VERSION, DatasetManifest, Sample, count_by_category
from utils.errors import MaskViolationError, RejectedInputError, SchemaVersionError


def manifest_path(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + '.manifest.json')


def _dumps(data: Dict[str, Any]) -> str:
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def _atomic_write(path: Path, lines: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            for line in lines:
                f.write(line + '\n')
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_sample(sample: Sample) -> Dict[str, Any]:
    return {
        'schema_version': SCHEMA_VERSION,
        'type': sample.sample_type,
        'segments': [list(s) for s in sample.segments()],
        **sample.to_dict()
    }


def decode_sample(data: Dict[str, Any], where: str = '<line>') -> Sample:
    """
    Parse one JSONL record and check its masks

    Raises:
        SchemaVersionError: unknown schema version
        MaskViolationError: stored segments disagree with the sample type
    """
    version = data.get('schema_version')
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{where}: schema version {version!r} is not {SCHEMA_VERSION!r}")
    cls = SAMPLE_TYPES.get(data.get('type'))
    if cls is None:
        raise RejectedInputError(f"{where}: unknown sample type {data.get('type')!r}")
    body = {k: v for k, v in data.items() if k not in ('schema_version', 'type', 'segments')}
    sample = cls.from_dict(body)
    stored = [tuple(s) for s in data.get('segments', [])]
    if stored != sample.segments():
        raise MaskViolationError(f"{where}: segments {stored} do not match a {cls.sample_type} sample")
    return sample


def write_jsonl(samples: Sequence[Sample], path: Path, manifest: Optional[DatasetManifest] = None) -> Path:
    """
    Write a corpus and its manifest

    Args:
        samples: Samples in file order
        path: Target .jsonl file
        manifest: Sidecar; its counts must match the samples

    Returns:
        The data path
    """
    path = Path(path)
    if manifest is not None and (manifest.total != len(samples) or manifest.counts != count_by_category(list(samples))):
        raise RejectedInputError(f"Manifest counts do not match the {len(samples)} samples written to {path}")
    _atomic_write(path, [_dumps(encode_sample(s)) for s in samples])
    if manifest is not None:
        _atomic_write(manifest_path(path), [json.dumps(manifest.model_dump(mode='json'), sort_keys=True, indent=2)])
    logger.info(f"Wrote {len(samples)} samples to {path}")
    return path


def read_jsonl(path: Path) -> List[Sample]:
    """Read a corpus written by write_jsonl"""
    path = Path(path)
    samples: List[Sample] = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as e:
                raise RejectedInputError(f"{where}: invalid JSON ({e})") from e
            samples.append(decode_sample(data, where))
    return samples


def read_manifest(path: Path) -> DatasetManifest:
    """Manifest of a corpus; pass either the data file or the manifest itself"""
    path = Path(path)
    if not path.name.endswith('.manifest.json'):
        path = manifest_path(path)
    with open(path, 'r', encoding='utf-8') as f:
        data = json.load(f)
    if data.get('schema_version') != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema version {data.get('schema_version')!r} is not {SCHEMA_VERSION!r}")
    return DatasetManifest.model_validate(data)


def read_corpus(path: Path) -> Tuple[List[Sample], DatasetManifest]:
    """Samples plus manifest, checking that the counts agree"""
    samples = read_jsonl(path)
    manifest = read_manifest(path)
    if manifest.total != len(samples) or manifest.counts != count_by_category(samples):
        raise RejectedInputError(f"{path}: manifest counts do not match file contents")
    return samples, manifest
