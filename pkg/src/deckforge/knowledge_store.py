"""Document ingestion, embedding, persistence, and similarity retrieval.

Two stores back retrieval: a static store built from solver manuals and a
dynamic per-task store built from user documents. Heavyweight OCR and vision
models sit behind the DocumentExtractor interface; the bundled fallback reads
plain-text sidecar files so the whole pipeline runs offline:

* ``doc.pdf.pages.txt``    page texts separated by form feeds (``\\f``)
* ``doc.pdf.figures.txt``  figure descriptions, blank-line separated,
                           each optionally prefixed ``[page N]``
* ``image.png.desc.txt``   the image description

Retrieval is a linear cosine scan; stores are desk scale.
"""

from __future__ import annotations

import hashlib
import json
import pathlib
import re
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np

__all__ = [
    "KnowledgeStoreError",
    "EmptyStoreError",
    "ExtractorFailure",
    "KnowledgeChunk",
    "VectorStore",
    "StoreSet",
    "HashedBagEmbedder",
    "SidecarExtractor",
    "ExtractedItem",
    "IngestResult",
    "chunk_text",
    "ingest",
    "ingest_directory",
    "query",
    "answer",
    "Answer",
]

CHUNK_SIZE = 1000
CHUNK_OVERLAP = 100

CHUNK_KINDS = ("text", "figure-description", "image-description")

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".gif", ".bmp", ".tif", ".tiff")
_SIDECAR_SUFFIXES = (".pages.txt", ".figures.txt", ".desc.txt")


class KnowledgeStoreError(Exception):
    pass


class EmptyStoreError(KnowledgeStoreError):
    pass


class ExtractorFailure(KnowledgeStoreError):
    pass


# ---------------------------------------------------------------------------
# Embedding
# ---------------------------------------------------------------------------

class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, texts: list[str]) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class HashedBagEmbedder:
    """Deterministic hashed bag-of-tokens embedding, L2-normalized.

    Tokens hash into a fixed number of buckets via md5, so vectors are
    bit-identical across runs and platforms. No model weights, no network.
    """

    def __init__(self, dimension: int = 256):
        self.dimension = dimension
        self.name = f"hashed-bag-{dimension}"

    def _bucket(self, token: str) -> int:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        return int.from_bytes(digest[:4], "big") % self.dimension

    def embed(self, texts: Iterable[str]) -> np.ndarray:
        texts = list(texts)
        out = np.zeros((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.lower()):
                out[i, self._bucket(token)] += 1.0
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
        return out


# ---------------------------------------------------------------------------
# Chunks and stores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KnowledgeChunk:
    id: str
    source_file: str
    page: int | None
    kind: str
    content: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in CHUNK_KINDS:
            raise ValueError(f"unknown chunk kind {self.kind!r}")
        if not self.content:
            raise ValueError("chunk content must be nonempty")
        if self.page is not None and self.page < 1:
            raise ValueError("page numbers start at 1")

    def citation(self) -> tuple[str, int | None]:
        return (self.source_file, self.page)


class VectorStore:
    """Embedded chunks plus the content hashes of their source documents."""

    def __init__(self, dimension: int, provider_tag: str):
        self.dimension = dimension
        self.provider_tag = provider_tag
        self.chunks: list[KnowledgeChunk] = []
        self.files: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self.chunks)

    def add_chunks(self, chunks: Iterable[KnowledgeChunk]) -> None:
        for c in chunks:
            if c.embedding is None or len(c.embedding) != self.dimension:
                raise KnowledgeStoreError(
                    f"chunk {c.id} embedding does not match store dimension")
            self.chunks.append(c)

    def drop_source(self, source_file: str) -> None:
        self.chunks = [c for c in self.chunks if c.source_file != source_file]
        self.files.pop(source_file, None)

    def matrix(self) -> np.ndarray:
        if not self.chunks:
            return np.zeros((0, self.dimension))
        return np.array([c.embedding for c in self.chunks], dtype=np.float64)

    # -- persistence: manifest.json + chunks.jsonl ---------------------------

    def save(self, directory) -> None:
        d = pathlib.Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"dimension": self.dimension, "provider_tag": self.provider_tag,
                    "files": dict(sorted(self.files.items()))}
        (d / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(d / "chunks.jsonl", "w", encoding="utf-8") as fh:
            for c in self.chunks:
                fh.write(json.dumps({
                    "id": c.id, "source_file": c.source_file, "page": c.page,
                    "kind": c.kind, "content": c.content,
                    "embedding": list(c.embedding),
                }) + "\n")

    @classmethod
    def load(cls, directory) -> "VectorStore":
        d = pathlib.Path(directory)
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        store = cls(dimension=int(manifest["dimension"]),
                    provider_tag=str(manifest["provider_tag"]))
        store.files = dict(manifest.get("files", {}))
        chunks_path = d / "chunks.jsonl"
        if chunks_path.exists():
            with open(chunks_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    store.chunks.append(KnowledgeChunk(
                        id=doc["id"], source_file=doc["source_file"],
                        page=doc["page"], kind=doc["kind"],
                        content=doc["content"],
                        embedding=tuple(doc["embedding"])))
        return store

    @classmethod
    def open(cls, directory, embedder: EmbeddingProvider) -> "VectorStore":
        """Load the store at ``directory``, or start an empty one for the
        embedder. A tag/dimension mismatch with an existing store is an
        error, not a silent re-embed."""
        d = pathlib.Path(directory)
        if (d / "manifest.json").exists():
            store = cls.load(d)
            if (store.dimension != embedder.dimension
                    or store.provider_tag != embedder.name):
                raise KnowledgeStoreError(
                    f"store at {d} was built with {store.provider_tag} "
                    f"(dim {store.dimension}), not {embedder.name}")
            return store
        return cls(dimension=embedder.dimension, provider_tag=embedder.name)


@dataclass
class StoreSet:
    """The static (solver manuals) and dynamic (task documents) store pair."""

    static_store: VectorStore
    dynamic_store: VectorStore

    def __post_init__(self):
        a, b = self.static_store, self.dynamic_store
        if a.dimension != b.dimension or a.provider_tag != b.provider_tag:
            raise KnowledgeStoreError(
                "static and dynamic stores must share embedder and dimension")

    def all_chunks(self) -> list[KnowledgeChunk]:
        return list(self.static_store.chunks) + list(self.dynamic_store.chunks)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtractedItem:
    page: int | None
    kind: str
    text: str


class DocumentExtractor(Protocol):
    def extract(self, document: pathlib.Path) -> list[ExtractedItem]: ...


_FIGURE_PAGE_RE = re.compile(r"^\[page\s+(\d+)\]\s*", re.IGNORECASE)


class SidecarExtractor:
    """Plain-text sidecar reader standing in for OCR and vision services."""

    def extract(self, document: pathlib.Path) -> list[ExtractedItem]:
        document = pathlib.Path(document)
        suffix = document.suffix.lower()
        if suffix == ".pdf":
            return self._extract_pdf(document)
        if suffix in _IMAGE_SUFFIXES:
            return self._extract_image(document)
        if suffix in (".txt", ".md"):
            return self._extract_text(document)
        raise ExtractorFailure(f"no extraction route for {document.name!r}")

    def _read(self, path: pathlib.Path) -> str:
        try:
            return path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ExtractorFailure(f"cannot read {path.name!r}: {exc}") from exc

    def _extract_pdf(self, document):
        pages_path = document.with_name(document.name + ".pages.txt")
        if not pages_path.exists():
            raise ExtractorFailure(
                f"{document.name!r} has no {pages_path.name!r} sidecar")
        items = [ExtractedItem(page=i, kind="text", text=page.strip())
                 for i, page in enumerate(self._read(pages_path).split("\f"), start=1)
                 if page.strip()]
        figures_path = document.with_name(document.name + ".figures.txt")
        if figures_path.exists():
            for para in re.split(r"\n\s*\n", self._read(figures_path)):
                para = para.strip()
                if not para:
                    continue
                page = None
                m = _FIGURE_PAGE_RE.match(para)
                if m:
                    page = int(m.group(1))
                    para = para[m.end():].strip()
                if para:
                    items.append(ExtractedItem(page=page, kind="figure-description",
                                               text=para))
        return items

    def _extract_image(self, document):
        desc_path = document.with_name(document.name + ".desc.txt")
        if not desc_path.exists():
            raise ExtractorFailure(
                f"{document.name!r} has no {desc_path.name!r} sidecar")
        text = self._read(desc_path).strip()
        if not text:
            raise ExtractorFailure(f"{desc_path.name!r} is empty")
        return [ExtractedItem(page=None, kind="image-description", text=text)]

    def _extract_text(self, document):
        content = self._read(document)
        return [ExtractedItem(page=i, kind="text", text=page.strip())
                for i, page in enumerate(content.split("\f"), start=1)
                if page.strip()]


# ---------------------------------------------------------------------------
# Chunking
# ---------------------------------------------------------------------------

def chunk_text(text: str, size: int = CHUNK_SIZE,
               overlap: int = CHUNK_OVERLAP) -> list[str]:
    """Split text into chunks of at most ``size`` characters.

    Cuts prefer paragraph boundaries, then line breaks, then spaces;
    consecutive chunks share up to ``overlap`` characters of context.
    """
    text = text.strip()
    if not text:
        return []
    if len(text) <= size:
        return [text]
    chunks = []
    start = 0
    floor = max(size // 2, 1)
    while start < len(text):
        end = min(start + size, len(text))
        if end < len(text):
            for pattern in ("\n\n", "\n", " "):
                cut = text.rfind(pattern, start + floor, end)
                if cut > start:
                    end = cut
                    break
        piece = text[start:end].strip()
        if piece:
            chunks.append(piece)
        if end >= len(text):
            break
        start = max(end - overlap, start + 1)
    return chunks


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IngestResult:
    store: VectorStore
    added: int
    skipped_sources: tuple[str, ...]
    failures: tuple[tuple[str, str], ...]


def _document_units(folder: pathlib.Path) -> dict[str, list[pathlib.Path]]:
    units: dict[str, list[pathlib.Path]] = {}
    for path in sorted(folder.iterdir()):
        if path.is_dir() or path.name.startswith("."):
            continue
        base = path.name
        for suffix in _SIDECAR_SUFFIXES:
            if path.name.endswith(suffix) and len(path.name) > len(suffix):
                base = path.name[: -len(suffix)]
                break
        units.setdefault(base, []).append(path)
    return units


def _unit_hash(paths: list[pathlib.Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(path.name.encode("utf-8"))
        digest.update(path.read_bytes())
    return digest.hexdigest()


def ingest(folder, extractor: DocumentExtractor, embedder: EmbeddingProvider,
           store: VectorStore, *, chunk_size: int = CHUNK_SIZE,
           chunk_overlap: int = CHUNK_OVERLAP) -> IngestResult:
    """Extract, chunk, embed, and append every new document under ``folder``.

    Documents already in the store with an unchanged content hash are
    skipped, so re-running on an unchanged folder is a no-op. A changed
    document replaces its previous chunks. Per-file extractor failures are
    reported and skipped; the store stays valid.
    """
    folder = pathlib.Path(folder)
    if not folder.is_dir():
        raise KnowledgeStoreError(f"not a readable directory: {folder}")
    added = 0
    skipped: list[str] = []
    failures: list[tuple[str, str]] = []

    for base, paths in _document_units(folder).items():
        content_hash = _unit_hash(paths)
        if store.files.get(base) == content_hash:
            skipped.append(base)
            continue
        try:
            items = extractor.extract(folder / base)
        except ExtractorFailure as exc:
            failures.append((base, str(exc)))
            continue
        new_chunks: list[KnowledgeChunk] = []
        seq = 0
        texts: list[str] = []
        metas: list[tuple[int | None, str]] = []
        for item in items:
            for piece in chunk_text(item.text, chunk_size, chunk_overlap):
                texts.append(piece)
                metas.append((item.page, item.kind))
        if texts:
            vectors = embedder.embed(texts)
            for (page, kind), text, vec in zip(metas, texts, vectors):
                new_chunks.append(KnowledgeChunk(
                    id=f"{base}#p{page or 0}#{seq}", source_file=base,
                    page=page, kind=kind, content=text,
                    embedding=tuple(float(x) for x in vec)))
                seq += 1
        store.drop_source(base)
        store.add_chunks(new_chunks)
        store.files[base] = content_hash
        added += len(new_chunks)

    return IngestResult(store=store, added=added,
                        skipped_sources=tuple(skipped), failures=tuple(failures))


def ingest_directory(folder, store_dir, embedder: EmbeddingProvider,
                     extractor: DocumentExtractor | None = None) -> IngestResult:
    """Ingest ``folder`` into the persistent store at ``store_dir``.

    Takes the advisory writer lock for the store directory, so concurrent
    ingests of one store serialize while readers stay unaffected.
    """
    from filelock import FileLock

    store_dir = pathlib.Path(store_dir)
    store_dir.mkdir(parents=True, exist_ok=True)
    extractor = extractor or SidecarExtractor()
    with FileLock(str(store_dir / ".ingest.lock")):
        store = VectorStore.open(store_dir, embedder)
        result = ingest(folder, extractor, embedder, store)
        store.save(store_dir)
    return result


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------

def query(stores: StoreSet | VectorStore, q: str, k: int,
          embedder: EmbeddingProvider) -> list[tuple[KnowledgeChunk, float]]:
    """Top-k chunks by cosine similarity over the union of both stores.

    Scores are descending; ties break lexicographically on
    (source_file, page, id) so results are reproducible. Raises
    EmptyStoreError when the union holds no chunks.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    chunks = stores.all_chunks() if isinstance(stores, StoreSet) else list(stores.chunks)
    if not chunks:
        raise EmptyStoreError("no chunks ingested yet")
    matrix = np.array([c.embedding for c in chunks], dtype=np.float64)
    qvec = embedder.embed([q])[0]
    qnorm = np.linalg.norm(qvec)
    norms = np.linalg.norm(matrix, axis=1)
    denom = norms * qnorm
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(denom > 0, matrix @ qvec / np.where(denom > 0, denom, 1.0), 0.0)
    scores = np.clip(scores, -1.0, 1.0)
    ranked = sorted(
        range(len(chunks)),
        key=lambda i: (-scores[i], chunks[i].source_file,
                       chunks[i].page or 0, chunks[i].id))
    return [(chunks[i], float(scores[i])) for i in ranked[:k]]


_ANSWER_TEMPLATE = """You answer engineering questions from retrieved document excerpts.

Question: {question}

Context excerpts, most relevant first:
{context}

Answer in Markdown, grounded only in the excerpts above."""


@dataclass(frozen=True)
class Answer:
    markdown: str
    references: tuple[tuple[str, int | None], ...]


def answer(stores: StoreSet | VectorStore, q: str, k: int,
           provider, embedder: EmbeddingProvider) -> Answer:
    """Retrieve, prompt the chat provider, and cite every retrieved chunk.

    The returned Markdown ends with a References section listing the
    (file, page) citation of each retrieved chunk in rank order.
    """
    hits = query(stores, q, k, embedder)
    blocks = []
    for i, (chunk, _score) in enumerate(hits, start=1):
        page = f" page {chunk.page}" if chunk.page is not None else ""
        blocks.append(f"[{i}] {chunk.source_file}{page}:\n{chunk.content}")
    prompt = _ANSWER_TEMPLATE.format(question=q, context="\n\n".join(blocks))
    text = provider.complete_text(prompt, context=[c.content for c, _ in hits])
    references = tuple(c.citation() for c, _ in hits)
    lines = [text.rstrip(), "", "### References"]
    for source, page in references:
        lines.append(f"- {source}" + (f", page {page}" if page is not None else ""))
    return Answer(markdown="\n".join(lines) + "\n", references=references)
