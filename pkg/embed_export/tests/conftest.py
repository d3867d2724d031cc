import json
import os

import pytest

os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

ORIGINAL_CAPTIONS = [
    {"id": "q1", "text": "the car is 10 meters away"},
    {"id": "q2", "text": "a person 1.8 meters tall stands 12.5 meters deep"},
    {"id": "q3", "text": "a red car on the left"},
    {"id": "q4", "text": "the pole is 3 meters high"},
]

AUGMENTED_CAPTIONS = [
    {"id": "q1", "text": "the car is 1000 centimeters away"},
    {"id": "q2", "text": "a person 18 decimeters tall stands 125 decimeters deep"},
    {"id": "q3", "text": "a red car on the left"},
    {"id": "q4", "text": "the pole is 30 decimeters high"},
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A deterministic miniature masked-LM checkpoint built offline."""
    import torch
    from tokenizers import Tokenizer
    from tokenizers.models import WordLevel
    from tokenizers.pre_tokenizers import WhitespaceSplit
    from tokenizers.processors import TemplateProcessing
    from transformers import PreTrainedTokenizerFast, RobertaConfig, RobertaModel

    words = sorted({
        w
        for record in ORIGINAL_CAPTIONS + AUGMENTED_CAPTIONS
        for w in record["text"].split()
    })
    vocab = {"<s>": 0, "<pad>": 1, "</s>": 2, "<unk>": 3, "<mask>": 4}
    for w in words:
        vocab[w] = len(vocab)

    tok = Tokenizer(WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = WhitespaceSplit()
    tok.post_processor = TemplateProcessing(
        single="<s> $A </s>",
        pair="<s> $A </s> </s> $B </s>",
        special_tokens=[("<s>", 0), ("</s>", 2)],
    )
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        bos_token="<s>", eos_token="</s>", unk_token="<unk>",
        pad_token="<pad>", cls_token="<s>", sep_token="</s>", mask_token="<mask>",
    )

    config = RobertaConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=160,
        pad_token_id=1, bos_token_id=0, eos_token_id=2,
        type_vocab_size=1,
    )
    torch.manual_seed(1234)
    model = RobertaModel(config)
    model.eval()

    target = tmp_path_factory.mktemp("tiny-mlm")
    model.save_pretrained(target)
    fast.save_pretrained(target)
    return str(target)


def _write_jsonl(path, records):
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )


@pytest.fixture(scope="session")
def corpus_paths(tmp_path_factory):
    base = tmp_path_factory.mktemp("corpora")
    original = base / "original.jsonl"
    augmented = base / "augmented.jsonl"
    _write_jsonl(original, ORIGINAL_CAPTIONS)
    _write_jsonl(augmented, AUGMENTED_CAPTIONS)
    return original, augmented
