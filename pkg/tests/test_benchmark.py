import importlib.util
from pathlib import Path

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


def test_quick_benchmark_variants_agree():
    spec = importlib.util.spec_from_file_location("bench_kernels", BENCH)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    results = bench.run(repeat=1, quick=True)
    assert len(results) == 4
    for label, t_nb, t_np, agree in results:
        assert agree, label
        assert t_nb > 0 and t_np > 0
