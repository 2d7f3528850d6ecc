#include "babynet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "babynet/common.hpp"

namespace babynet {

namespace {

double eval_scalar(const std::function<Tensor(Graph*)>& f, Graph* g) {
    Tensor out = f(g);
    if (!out.defined() || out.numel() != 1)
        throw ValueError("finite_difference_check: f must return a scalar tensor");
    return static_cast<double>(out.data()[0]);
}

}  // namespace

GradCheckReport finite_difference_check(const std::function<Tensor(Graph*)>& f,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        const GradCheckOptions& options) {
    return finite_difference_check(
        f, [&f]() { return eval_scalar(f, nullptr); }, params, options);
}

GradCheckReport finite_difference_check(const std::function<Tensor(Graph*)>& f,
                                        const std::function<double()>& probe,
                                        const std::vector<std::pair<std::string, Tensor>>& params,
                                        const GradCheckOptions& options) {
    if (options.eps <= 0.0) throw ValueError("finite_difference_check: eps must be positive");

    // Analytic pass.
    for (const auto& [name, t] : params) {
        Tensor p = t;
        p.zero_grad();
    }
    Graph graph;
    Tensor loss = f(&graph);
    if (!loss.defined() || loss.numel() != 1)
        throw ValueError("finite_difference_check: f must return a scalar tensor");
    graph.backward(loss);

    // Pick the probe set: every element, or a seeded global subsample.
    std::vector<std::pair<std::size_t, int64_t>> probes;  // (param idx, flat idx)
    if (options.total_samples > 0) {
        int64_t total = 0;
        for (const auto& [name, t] : params) total += t.numel();
        int64_t want = std::min<int64_t>(options.total_samples, total);
        Rng rng(mix_seed({options.seed, 0x67726164ULL}));
        std::vector<int64_t> flat;
        flat.reserve(static_cast<std::size_t>(want));
        while (static_cast<int64_t>(flat.size()) < want) {
            int64_t pick = static_cast<int64_t>(rng.next_u64() % static_cast<std::uint64_t>(total));
            if (std::find(flat.begin(), flat.end(), pick) == flat.end()) flat.push_back(pick);
        }
        std::sort(flat.begin(), flat.end());
        std::size_t pi = 0;
        int64_t base = 0;
        for (int64_t fidx : flat) {
            while (fidx >= base + params[pi].second.numel()) {
                base += params[pi].second.numel();
                ++pi;
            }
            probes.emplace_back(pi, fidx - base);
        }
    } else {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (int64_t i = 0; i < params[pi].second.numel(); ++i) probes.emplace_back(pi, i);
    }

    GradCheckReport report;
    for (const auto& [pi, idx] : probes) {
        Tensor p = params[pi].second;
        float saved = p.data()[static_cast<std::size_t>(idx)];
        double analytic = p.has_grad() ? static_cast<double>(p.grad()[static_cast<std::size_t>(idx)]) : 0.0;

        // Perturb by the float steps actually representable around the value
        // and divide by the realized interval.
        float up = static_cast<float>(saved + options.eps);
        float dn = static_cast<float>(saved - options.eps);
        p.data()[static_cast<std::size_t>(idx)] = up;
        double lp = probe();
        p.data()[static_cast<std::size_t>(idx)] = dn;
        double lm = probe();
        p.data()[static_cast<std::size_t>(idx)] = saved;

        double numeric = (lp - lm) / (static_cast<double>(up) - static_cast<double>(dn));
        double denom = std::max({std::abs(analytic), std::abs(numeric), options.denom_floor});
        double rel = std::abs(analytic - numeric) / denom;

        GradCheckEntry e{params[pi].first, idx, analytic, numeric, rel};
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_param = e.param;
            report.worst_index = idx;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace babynet
