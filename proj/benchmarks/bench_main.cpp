#include <benchmark/benchmark.h>

// The packaged benchmark_main archive is not linkable with this toolchain.
BENCHMARK_MAIN();
