"""Render a few chunk masks and compare the receptive-field closed form
against the exact traversal, including where the two disagree.
"""

from chunkmel import (
    ALL,
    DecoderConfig,
    build_static_mask,
    receptive_field_formula,
    receptive_field_oracle,
)


def show(frames: int, chunk: int, past) -> None:
    print(f"frames={frames} chunk={chunk} past={past}")
    print(build_static_mask(frames, chunk, past).ascii())


def main() -> None:
    show(8, 2, 1)
    show(8, 2, 0)
    show(8, 2, ALL)
    show(10, 4, 3)  # partial last chunk keeps its own chunk plus 3 past frames

    print("receptive field, reach in frames of the newest output chunk:")
    print(f"{'layers':>6} {'chunk':>5} {'past':>4} {'formula':>7} {'oracle':>6}")
    for n_layers, chunk, past in [
        (6, 30, 15),
        (2, 30, 15),
        (2, 30, 60),
        (1, 30, 60),
        (3, 30, 60),
        (2, 30, 0),
        (2, 30, 30),
    ]:
        f = receptive_field_formula(n_layers, past, chunk)
        cfg = DecoderConfig(n_layers=n_layers, n_heads=1, d_model=8,
                            chunk_size=chunk, past_size=past)
        o = receptive_field_oracle(cfg).r_oracle
        flag = "" if f == o else "  <- formula disagrees, traversal is ground truth"
        print(f"{n_layers:>6} {chunk:>5} {past:>4} {f:>7} {o:>6}{flag}")

    rep = receptive_field_oracle(DecoderConfig(n_heads=1, d_model=8, past_size=ALL))
    print(f"past=all: unbounded={rep.unbounded}, earliest frame {rep.earliest_frame}")


if __name__ == "__main__":
    main()
