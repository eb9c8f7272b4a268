// Times the serial reference loop against the OpenMP kernel on the two hot
// paths: batched chart-flow evaluation (the covering grids) and hypothesis
// sampling. Usage: bench_parallel [n] [points]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "hetshadow/chart.hpp"
#include "hetshadow/integrate.hpp"
#include "hetshadow/model.hpp"
#include "hetshadow/parallel.hpp"

using namespace hetshadow;
using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    int n = argc > 1 ? std::atoi(argv[1]) : 4;
    long points = argc > 2 ? std::atol(argv[2]) : 512;

    LatticeModel model = ck_model(n);
    ChartFrame frame = make_chart_frame(model, 2);
    ChartVectorField field(frame);

    std::vector<std::vector<double>> grid(points, std::vector<double>(frame.dim, 0.0));
    for (long i = 0; i < points; ++i) {
        grid[i][frame.idx_ym] = 0.05 + 1e-4 * (i % 17);
        grid[i][frame.idx_xp] = 1e-5 * (1 + i % 13);
        grid[i][frame.idx_xm] = 1e-9 * (i % 7);
    }
    IntegrateOptions opts;
    opts.rtol = 1e-9;
    opts.atol = 1e-12;

    std::vector<double> out_serial(points), out_parallel(points);
    auto body = [&](std::vector<double>& sink) {
        return [&grid, &field, &frame, &opts, &sink](long i) {
            auto y = flow_map(field.as_field(), frame.dim, grid[i], 3.0, opts);
            sink[i] = y[frame.idx_xp];
        };
    };

    auto t0 = clock_type::now();
    serial_for(points, body(out_serial));
    double t_serial = seconds_since(t0);

    t0 = clock_type::now();
    parallel_for(points, body(out_parallel));
    double t_parallel = seconds_since(t0);

    double worst = 0.0;
    for (long i = 0; i < points; ++i)
        worst = std::max(worst, std::abs(out_serial[i] - out_parallel[i]));

    std::printf("chart flow batch: %ld points, dim %d\n", points, frame.dim);
    std::printf("  serial   %.3fs\n", t_serial);
    std::printf("  parallel %.3fs  (%d threads, speedup %.2fx)\n", t_parallel, thread_count(),
                t_serial / t_parallel);
    std::printf("  max serial/parallel mismatch: %.3e\n", worst);
    return worst == 0.0 ? 0 : 1;
}
