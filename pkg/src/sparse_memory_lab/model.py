"""Toy decoder-only language model wiring the table lookups, partial experts,
and wide-representation stacks behind one config-driven builder.

Parameter draws use a fixed SeedSequence spawn-key layout so that configs
which should coincide (e.g. the K=1 wide stack vs. the plain baseline) draw
bit-identical initializations from the same master seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .altup import (
    BlockSelection,
    DivideProjectParams,
    PccFullParams,
    PccParams,
    PccSimplifiedParams,
    WideRepresentation,
    altup_stack_forward,
    divide_and_project,
    sum_consume,
)
from .autodiff import Tensor, concat
from .config import ExperimentConfig
from .lookup import (
    HyperplaneLshParams,
    LookupParams,
    MemoryTable,
    SoftmaxRouterParams,
    SphericalLshParams,
    TokenContext,
    TokenIdLookup,
    memory_augmented_forward,
)
from .nn import TransformerBlockParams, lecun_normal_init, transformer_block_forward


def _seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=key)


@dataclass
class LanguageModel:
    config: ExperimentConfig
    embed_tables: list[Tensor]
    aug_table: Tensor | None
    sum_table: Tensor | None
    out_table: Tensor
    blocks: list[TransformerBlockParams]
    pcc: list[PccParams] | None
    dp: DivideProjectParams | None
    lookups: list[LookupParams] | None
    tables: list[MemoryTable] | None
    selection: BlockSelection

    @property
    def K(self) -> int:
        if self.config.memory.consumption in ("sameup", "altup"):
            return self.config.altup.K
        return 1

    @property
    def wide(self) -> bool:
        return self.config.memory.consumption in ("sameup", "altup") and self.K > 1

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: ExperimentConfig) -> "LanguageModel":
        config.validate()
        m, mem, alt, tr = config.model, config.memory, config.altup, config.training
        master = tr.seed
        V, d = m.vocab, m.d

        wide = mem.consumption in ("sameup", "altup")
        K = alt.K if wide else 1

        embed_tables = [lecun_normal_init((V, d), _seed(master, 0, 0), fan_in=d)]
        aug_table = None
        dp = None
        if wide and K > 1:
            if alt.e > 0:
                aug_table = lecun_normal_init((V, alt.e), _seed(master, 0, 1), fan_in=alt.e)
                dp = DivideProjectParams.init(alt.e, K - 1, d, _seed(master, 6))
            else:
                for k in range(1, K):
                    embed_tables.append(
                        lecun_normal_init((V, d), _seed(master, 0, k), fan_in=d))

        sum_table = None
        if mem.consumption == "sum":
            sum_table = lecun_normal_init((V, d), _seed(master, 1), fan_in=d)

        head_width = K * d if (wide and K > 1 and alt.head == "proj") else d
        out_table = lecun_normal_init((V, head_width), _seed(master, 2), fan_in=head_width)

        blocks = [
            TransformerBlockParams.init(d, m.heads, _seed(master, 3, i))
            for i in range(m.layers)
        ]

        pcc: list[PccParams] | None = None
        if wide and K > 1:
            if alt.variant == "full":
                pcc = [PccFullParams.identity_init(K, d) for _ in range(m.layers)]
            else:
                pcc = [PccSimplifiedParams.identity_init(K) for _ in range(m.layers)]

        lookups: list[LookupParams] | None = None
        tables: list[MemoryTable] | None = None
        if mem.lookup != "none":
            if mem.lookup == "token_id":
                if mem.buckets not in (1, V):
                    raise ValueError(
                        "token_id lookup requires memory.buckets equal to the vocabulary "
                        f"size ({V}) or left at the default 1")
                n = V
            else:
                n = mem.buckets
            lookups = []
            tables = []
            shared_table: MemoryTable | None = None
            for i in range(m.layers):
                if mem.lookup == "token_id":
                    lookups.append(TokenIdLookup(n=n))
                elif mem.lookup == "softmax":
                    lookups.append(SoftmaxRouterParams.init(
                        n, d, mem.k, _seed(master, 5, i)))
                elif mem.lookup == "hyperplane":
                    k_proj = max(1, int(np.ceil(np.log2(max(n, 2)))))
                    lookups.append(HyperplaneLshParams.init(
                        d, k_proj, mem.width, n, _seed(master, 5, i)))
                else:
                    lookups.append(SphericalLshParams.init(n, d, _seed(master, 5, i)))
                if mem.share_table and mem.lookup == "token_id":
                    if shared_table is None:
                        shared_table = MemoryTable.init(n, d, mem.rank, _seed(master, 4, 0))
                    tables.append(shared_table)
                else:
                    tables.append(MemoryTable.init(n, d, mem.rank, _seed(master, 4, i)))

        selection = BlockSelection(mode="same", fixed_index=0) \
            if mem.consumption == "sameup" else BlockSelection(mode=alt.selection)

        return cls(config=config, embed_tables=embed_tables, aug_table=aug_table,
                   sum_table=sum_table, out_table=out_table, blocks=blocks,
                   pcc=pcc, dp=dp, lookups=lookups, tables=tables,
                   selection=selection)

    # -- parameters -----------------------------------------------------------

    def embedding_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, t in enumerate(self.embed_tables):
            out[f"embed{k}"] = t
        if self.aug_table is not None:
            out["embed_aug"] = self.aug_table
        if self.sum_table is not None:
            out["embed_sum"] = self.sum_table
        out["out_table"] = self.out_table
        return out

    def non_embedding_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, block in enumerate(self.blocks):
            for name, t in block.parameters().items():
                out[f"block{i}_{name}"] = t
        if self.pcc is not None:
            for i, p in enumerate(self.pcc):
                for name, t in p.parameters().items():
                    out[f"pcc{i}_{name}"] = t
        if self.dp is not None:
            for name, t in self.dp.parameters().items():
                out[f"dp_{name}"] = t
        if self.tables is not None:
            seen: set[int] = set()
            for i, table in enumerate(self.tables):
                if id(table) in seen:
                    continue
                seen.add(id(table))
                for name, t in table.parameters().items():
                    out[f"mem{i}_{name}"] = t
        if self.lookups is not None:
            for i, lk in enumerate(self.lookups):
                if isinstance(lk, SoftmaxRouterParams):
                    out[f"router{i}_W"] = lk.W
        return out

    def parameters(self) -> dict[str, Tensor]:
        return {**self.embedding_parameters(), **self.non_embedding_parameters()}

    # -- forward ---------------------------------------------------------------

    def _layer_fn(self, layer_index: int, tokens: np.ndarray, train_mode: bool,
                  rng: np.random.Generator | None) -> Callable[[Tensor], Tensor]:
        block = self.blocks[layer_index]

        def base(x: Tensor) -> Tensor:
            return transformer_block_forward(x, block, causal=True)

        if self.lookups is None:
            return base

        lookup = self.lookups[layer_index]
        table = self.tables[layer_index]

        def augmented(x: Tensor) -> Tensor:
            # the block is the always-on main expert; each position adds its
            # routed partial experts on the block *input*, per the layer contract
            seq, d = x.shape
            out = transformer_block_forward(x, block, causal=True)
            zero = Tensor(np.zeros(d))
            rows = []
            for t in range(seq):
                xt = x.narrow(0, t, 1).reshape(d)
                yt = memory_augmented_forward(
                    lambda _v: zero, xt, TokenContext(int(tokens[t])),
                    lookup, table, train_mode=train_mode, rng=rng)
                rows.append(yt.reshape(1, d))
            return out + concat(rows, axis=0)

        return augmented

    def initial_representation(self, tokens: np.ndarray) -> WideRepresentation:
        primary = self.embed_tables[0].take(tokens)
        if self.sum_table is not None:
            primary = sum_consume(primary, self.sum_table.take(tokens))
        blocks = [primary]
        if self.wide:
            if self.aug_table is not None:
                blocks.extend(divide_and_project(self.aug_table.take(tokens), self.dp))
            else:
                blocks.extend(t.take(tokens) for t in self.embed_tables[1:])
        return WideRepresentation(blocks=blocks)

    def forward(self, tokens: np.ndarray, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Logits (seq, vocab) for one token sequence."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 1:
            raise ValueError("forward expects a 1-D token sequence")
        x0 = self.initial_representation(tokens)
        fns = [self._layer_fn(i, tokens, train_mode, rng)
               for i in range(len(self.blocks))]
        final, _ = altup_stack_forward(
            x0, fns, self.selection, self.pcc if self.wide else None)
        head = self.config.altup.head if self.wide else "block0"
        if head == "proj":
            read = final.to_flat()
        elif head == "mean":
            acc = final.blocks[0]
            for b in final.blocks[1:]:
                acc = acc + b
            read = acc * (1.0 / final.K)
        else:
            read = final.blocks[0]
        return read @ self.out_table.T

    def sequence_loss(self, window: np.ndarray, train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Mean next-token cross-entropy (nats) over one (seq+1)-token window."""
        window = np.asarray(window, dtype=np.int64)
        logits = self.forward(window[:-1], train_mode=train_mode, rng=rng)
        logprobs = logits.log_softmax(axis=1)
        picked = logprobs.gather_cols(window[1:])
        return -picked.mean()


def count_params(model: LanguageModel) -> tuple[int, int]:
    """(embedding, non-embedding) trainable scalar counts; sums to the total."""
    emb = sum(t.size for t in model.embedding_parameters().values())
    non = sum(t.size for t in model.non_embedding_parameters().values())
    return emb, non
