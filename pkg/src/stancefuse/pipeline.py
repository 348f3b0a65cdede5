"""Stage one of the pipeline: turn manifest records into model-ready examples.

For this dataset the *source text* is the video topic and the *reply text*
is the transcript sentence. The text encoder sees the (summarized) source
text; the joint encoder sees ``transcript + caption``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .config import AblationVariant, ModelConfig
from .context import DEFAULT_CAPTION_PROMPT, ContextClient
from .dataset import ExampleRecord
from .encoders import ImageTensor, load_image
from .errors import DataError
from .jtmo import JointInput, build_joint_input
from .text import TokenSeq, Vocab, tokenize


@dataclass(frozen=True)
class ExampleContext:
    record: ExampleRecord
    source_text: str
    summary: str | None
    caption: str | None

    @property
    def encoder_text(self) -> str:
        return self.summary if self.summary is not None else self.source_text

    @property
    def split(self) -> str:
        return self.record.split


@dataclass(frozen=True)
class PreparedExample:
    record: ExampleRecord
    text: TokenSeq
    joint: JointInput | None
    image: ImageTensor | None
    summary: str | None
    caption: str | None

    @property
    def label(self) -> int:
        return int(self.record.label)

    @property
    def split(self) -> str:
        return self.record.split


def image_path(record: ExampleRecord, image_root) -> Path:
    return Path(image_root) / record.image


def extract_context(
    records: Iterable[ExampleRecord],
    client: ContextClient,
    variant: AblationVariant,
    image_root,
    caption_prompt: str = DEFAULT_CAPTION_PROMPT,
) -> list[ExampleContext]:
    """Summaries and captions for every record, as the variant requires."""
    out = []
    for rec in records:
        path = image_path(rec, image_root)
        if rec.image_missing or not path.is_file():
            raise DataError(f"record {rec.id}: image {path} is missing")
        source = rec.topic if rec.topic.strip() else rec.transcript
        summary = client.summarize(source, rec.topic).output if variant.uses_summarizer else None
        caption = client.caption(path, rec.topic, caption_prompt).output if variant.uses_captioner else None
        out.append(ExampleContext(rec, source, summary, caption))
    client.flush()
    return out


def vocab_corpus(contexts: Iterable[ExampleContext]) -> Iterator[str]:
    for ctx in contexts:
        yield ctx.encoder_text
        yield ctx.record.transcript
        if ctx.caption:
            yield ctx.caption


def prepare_example(
    ctx: ExampleContext, vocab: Vocab, cfg: ModelConfig, variant: AblationVariant, image_root
) -> PreparedExample:
    text = tokenize(ctx.encoder_text, vocab, cfg.encoder.max_len)
    if len(text) == 0:
        raise DataError(f"record {ctx.record.id}: text encoder input has no tokens")
    joint = None
    if variant.uses_jtmo:
        reply = tokenize(ctx.record.transcript, vocab, cfg.jtmo.max_len)
        cap = tokenize(ctx.caption, vocab, cfg.jtmo.max_len) if ctx.caption else TokenSeq((), ())
        joint = build_joint_input(reply, cap, cfg.jtmo.max_len)
    image = load_image(image_path(ctx.record, image_root), cfg.encoder)
    return PreparedExample(ctx.record, text, joint, image, ctx.summary, ctx.caption)


def prepare_examples(
    contexts: Sequence[ExampleContext], vocab: Vocab, cfg: ModelConfig, variant: AblationVariant, image_root
) -> list[PreparedExample]:
    return [prepare_example(c, vocab, cfg, variant, image_root) for c in contexts]
