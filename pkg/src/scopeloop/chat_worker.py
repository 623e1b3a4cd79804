"""Chat worker subprocess entry point (``python -m scopeloop.chat_worker``).

Hosts the text-generation model behind the newline-delimited JSON protocol
described in ``scopeloop.chat``. The default (and only built-in) model is
``mock``: it picks one of a fixed set of canned descriptions by hashing the
attached image bytes (or the prompt text when no image is given) and streams
it in small word groups, which exercises every streaming path
deterministically.
"""

import base64
import hashlib
import json
import sys

MOCK_TEMPLATES = (
    "This field shows a densely cellular tissue fragment with fairly uniform "
    "nuclei and scattered darker foci. Several cells show enlarged nuclei with "
    "coarse chromatin. No definite necrosis is seen in this view. Consider "
    "correlating with an adjacent field at higher magnification before drawing "
    "conclusions.",
    "The region contains loosely arranged spindle-shaped cells over a pale "
    "fibrillary background. Occasional rounded cells with clear halos are "
    "present. Vessels appear thin-walled and evenly spaced. The overall "
    "impression is a low-cellularity area; sampling another region may give a "
    "more representative picture.",
    "A sharply demarcated cluster of strongly stained nuclei dominates the "
    "center of the image, surrounded by paler supporting tissue. A few "
    "fragmented cells near the edge could represent processing artifact. The "
    "staining intensity gradient suggests the section thickness varies across "
    "this field.",
    "This capture shows mixed cellularity with small dark nuclei interspersed "
    "among larger vesicular ones. There are two mitotic-appearing figures near "
    "the lower border. Edge blur on the right side suggests the stage was "
    "moving during acquisition; a steadier capture would help.",
)

WORDS_PER_CHUNK = 4
MIN_CHUNKS = 5


def pick_template(image_bytes: bytes | None, text: str) -> str:
    seed = image_bytes if image_bytes is not None else text.encode()
    digest = hashlib.sha256(seed).digest()
    return MOCK_TEMPLATES[int.from_bytes(digest[:4], "big") % len(MOCK_TEMPLATES)]


def chunk_text(text: str, words_per_chunk: int = WORDS_PER_CHUNK) -> list:
    """Split into word groups, preserving bytes exactly on reassembly."""
    words = text.split(" ")
    per = words_per_chunk
    # guarantee the streaming contract even for short texts
    while per > 1 and -(-len(words) // per) < MIN_CHUNKS:
        per -= 1
    chunks = []
    for i in range(0, len(words), per):
        group = " ".join(words[i:i + per])
        if i + per < len(words):
            group += " "
        chunks.append(group)
    return chunks


def _emit(message: dict):
    sys.stdout.write(json.dumps(message) + "\n")
    sys.stdout.flush()


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    model = argv[0] if argv else "mock"
    if model != "mock":
        _emit({"type": "error", "message": f"unknown chat model {model!r}"})
        return 2
    _emit({"type": "ready", "model": model})

    image_parts: list = []
    attached_image: bytes | None = None
    for raw in sys.stdin:
        raw = raw.strip()
        if not raw:
            continue
        try:
            message = json.loads(raw)
        except json.JSONDecodeError:
            _emit({"type": "error", "message": "unparseable message"})
            continue
        kind = message.get("type")
        if kind == "close":
            return 0
        if kind == "image":
            image_parts.append(message.get("data_b64", ""))
            if message.get("done"):
                attached_image = base64.b64decode("".join(image_parts))
                image_parts = []
            continue
        if kind == "prompt":
            text = message.get("text", "")
            if message.get("image_b64"):
                image = base64.b64decode(message["image_b64"])
            elif message.get("image_attached") and attached_image is not None:
                image, attached_image = attached_image, None
            else:
                image = None
            reply = pick_template(image, text)
            for chunk in chunk_text(reply):
                _emit({"type": "token", "text": chunk})
            _emit({"type": "done"})
            continue
        _emit({"type": "error", "message": f"unknown message type {kind!r}"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
