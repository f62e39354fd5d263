#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "srt/alloc_tracker.hpp"
#include "srt/errors.hpp"
#include "srt/perturb.hpp"
#include "srt/pipeline.hpp"
#include "srt/vit.hpp"

// Naive vs efficient vs parallel-efficient timing and memory comparison.
namespace srt::bench {

inline constexpr float kEquivalenceTolerance = 1e-5f;

struct BenchRow {
    std::string path;
    int level = 0;
    std::size_t jobs = 1;
    std::size_t passes = 0;
    double seconds = 0.0;
    std::int64_t peak_bytes = 0;
    float max_abs_dev = 0.0f; // against the naive path at the same level
};

struct BenchReport {
    double single_forward_seconds = 0.0;
    std::vector<BenchRow> rows;
    bool memory_tracked = false;

    const BenchRow& find(const std::string& path, int level) const
    {
        for (const auto& r : rows)
            if (r.path == path && r.level == level) return r;
        throw Error("bench: no row for " + path + " at level " + std::to_string(level));
    }
};

// Best-of-`reps` wall time in seconds.
template <typename Fn>
double time_best(Fn&& fn, int reps)
{
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < std::max(reps, 1); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

template <typename Fn>
std::int64_t measure_peak(Fn&& fn)
{
    PeakScope scope;
    fn();
    return scope.peak_transient();
}

// Checks equivalence first (naive vs efficient within 1e-5, sequential vs
// parallel efficient bit-exact) and only then times the paths. Any
// disagreement raises EquivalenceError and no timings are reported.
inline BenchReport run_bench(const ViTModel& model, const Image& image, std::size_t layer, const std::vector<int>& levels,
                             std::size_t parallel_jobs, int reps = 3)
{
    BenchReport report;
    report.memory_tracked = tracker_installed();
    report.single_forward_seconds = time_best([&] { (void)forward_to_layer(model, image, layer); }, reps);

    for (int d : levels) {
        const auto pset = build_grid(d);
        SrtOptions seq;
        SrtOptions par;
        par.jobs = parallel_jobs;

        const FeatureMap naive = srt_tokens(model, image, layer, pset, seq);
        const FeatureMap eff = srt_tokens_efficient(model, image, layer, pset, seq);
        const FeatureMap eff_par = srt_tokens_efficient(model, image, layer, pset, par);
        const float dev = max_abs_diff(naive.data, eff.data);
        if (!(dev <= kEquivalenceTolerance))
            throw EquivalenceError("bench: efficient path deviates from naive by " + std::to_string(dev) + " at d=" +
                                   std::to_string(d));
        if (!(eff_par == eff))
            throw EquivalenceError("bench: parallel efficient path differs from sequential at d=" + std::to_string(d));

        auto row = [&](std::string path, std::size_t jobs, float deviation, auto&& fn) {
            BenchRow r;
            r.path = std::move(path);
            r.level = d;
            r.jobs = jobs;
            r.passes = pset.size();
            r.max_abs_dev = deviation;
            r.peak_bytes = measure_peak(fn);
            r.seconds = time_best(fn, reps);
            report.rows.push_back(r);
        };
        row("naive", 1, 0.0f, [&] { (void)srt_tokens(model, image, layer, pset, seq); });
        row("efficient", 1, dev, [&] { (void)srt_tokens_efficient(model, image, layer, pset, seq); });
        row("efficient-parallel", parallel_jobs, max_abs_diff(naive.data, eff_par.data),
            [&] { (void)srt_tokens_efficient(model, image, layer, pset, par); });
    }
    return report;
}

inline void write_csv(std::ostream& os, const BenchReport& r)
{
    os << "path,d,jobs,passes,seconds,peak_bytes,max_abs_dev\n";
    os << "single-forward,0,1,1," << r.single_forward_seconds << ",0,0\n";
    for (const auto& row : r.rows)
        os << row.path << ',' << row.level << ',' << row.jobs << ',' << row.passes << ',' << row.seconds << ','
           << row.peak_bytes << ',' << row.max_abs_dev << '\n';
}

inline void write_table(std::ostream& os, const BenchReport& r)
{
    std::ostringstream out;
    out << std::left << std::setw(20) << "path" << std::right << std::setw(4) << "d" << std::setw(6) << "jobs"
        << std::setw(8) << "passes" << std::setw(14) << "seconds" << std::setw(14) << "peak_bytes" << std::setw(14)
        << "max_abs_dev" << '\n';
    out << std::left << std::setw(20) << "single-forward" << std::right << std::setw(4) << 0 << std::setw(6) << 1
        << std::setw(8) << 1 << std::setw(14) << std::fixed << std::setprecision(6) << r.single_forward_seconds
        << std::setw(14) << "-" << std::setw(14) << "-" << '\n';
    for (const auto& row : r.rows) {
        out << std::left << std::setw(20) << row.path << std::right << std::setw(4) << row.level << std::setw(6)
            << row.jobs << std::setw(8) << row.passes << std::setw(14) << std::fixed << std::setprecision(6)
            << row.seconds << std::setw(14) << (r.memory_tracked ? std::to_string(row.peak_bytes) : std::string("n/a"))
            << std::setw(14) << std::scientific << std::setprecision(2) << row.max_abs_dev << '\n';
    }
    os << out.str();
}

} // namespace srt::bench
