"""Teacher-forcing state over a gold label set.

During training the target is a flat token sequence: the gold labels in some
order, separated by SEP and closed by EOS.  At every target position there is
a set of token ids that would keep the output consistent with *some* gold
label not yet produced; that set is the numerator index set of the
multi-softmax loss.  A :class:`GoldTracker` maintains the remaining labels in
a prefix trie and computes the set in one trie walk.
"""

from __future__ import annotations

from .tokenizer import EOS, SEP, TokenSeq


class _TrieNode:
    __slots__ = ("children", "terminal")

    def __init__(self) -> None:
        self.children: dict[int, _TrieNode] = {}
        self.terminal = False


def _build_trie(sequences: frozenset[TokenSeq]) -> _TrieNode:
    root = _TrieNode()
    for seq in sequences:
        node = root
        for token in seq:
            node = node.children.setdefault(token, _TrieNode())
        node.terminal = True
    return root


class GoldTracker:
    """Tracks which gold labels remain and which tokens may come next.

    ``remaining`` holds the tokenized gold labels not yet fully emitted
    (including the one currently in progress); ``partial`` holds the tokens
    of the in-progress label since the last SEP or the start of decoding.
    The trie is rebuilt whenever a label completes; label sets are small
    enough that this costs nothing measurable.
    """

    def __init__(self, gold_labels: frozenset[TokenSeq] | set[TokenSeq]):
        if not gold_labels:
            raise ValueError("gold label set must be non-empty")
        for seq in gold_labels:
            if not seq:
                raise ValueError("gold labels must be non-empty token sequences")
        self.remaining: frozenset[TokenSeq] = frozenset(gold_labels)
        self.partial: TokenSeq = ()
        self._root = _build_trie(self.remaining)
        self._node: _TrieNode | None = self._root

    @property
    def done(self) -> bool:
        return not self.remaining

    def admissible_tokens(self, total_gold: int | None = None, completed: int | None = None) -> frozenset[int]:
        """Token ids that extend ``partial`` toward a remaining label.

        Byte tokens that keep ``partial`` a (possibly full) prefix of a
        remaining label are always admissible.  When ``partial`` exactly
        equals a remaining label, SEP is admissible while other labels
        remain and EOS when it is the last one.

        ``total_gold``/``completed`` are an optional bookkeeping check:
        ``completed`` must equal ``total_gold - len(remaining)``.
        """
        if total_gold is not None and completed is not None:
            if completed != total_gold - len(self.remaining):
                raise ValueError(
                    f"bookkeeping mismatch: completed={completed}, "
                    f"total_gold={total_gold}, remaining={len(self.remaining)}"
                )
        if self.done:
            raise ValueError("all gold labels already consumed")
        if self._node is None:
            raise ValueError(f"partial {self.partial!r} matches no remaining label")
        tokens = set(self._node.children)
        if self._node.terminal:
            tokens.add(SEP if len(self.remaining) >= 2 else EOS)
        return frozenset(tokens)

    def advance(self, token: int) -> None:
        """Consume one target token.  Raises if the token is not admissible."""
        allowed = self.admissible_tokens()
        if token not in allowed:
            raise ValueError(
                f"token {token} not admissible after partial {self.partial!r} "
                f"(admissible: {sorted(allowed)})"
            )
        if token == SEP:
            self.remaining = self.remaining - {self.partial}
            self.partial = ()
            self._root = _build_trie(self.remaining)
            self._node = self._root
        elif token == EOS:
            self.remaining = frozenset()
            self.partial = ()
            self._node = None
        else:
            assert self._node is not None
            self.partial = self.partial + (token,)
            self._node = self._node.children[token]
