#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "memmc/errors.hpp"
#include "memmc/model.hpp"
#include "memmc/types.hpp"

namespace memmc {

/// Learning rate at a fractional epoch position: linear warmup from zero,
/// then cosine decay to zero at the final epoch.
inline double lr_at(double base_lr, double progress_epochs, int warmup_epochs, int total_epochs) {
    if (base_lr <= 0.0) throw ValueError("lr_at: base_lr must be positive");
    if (warmup_epochs >= total_epochs) throw ValueError("lr_at: warmup must end before training");
    if (progress_epochs <= 0.0) return 0.0;
    if (warmup_epochs > 0 && progress_epochs < warmup_epochs) {
        return base_lr * progress_epochs / warmup_epochs;
    }
    const double t = (progress_epochs - warmup_epochs) / (total_epochs - warmup_epochs);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

/// Adam with decoupled weight decay. Moment estimates are kept per parameter
/// name; decay applies only to parameters flagged for it (weight matrices and
/// memory rows, not biases or normalization parameters).
template <typename S>
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
    std::int64_t step_count = 0;
    std::map<std::string, std::pair<Mat<S>, Mat<S>>> moments;  // name -> (m, v)

    void step(Model<S>& model, double lr) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        model.for_each_param([&](const std::string& name, Param<S>& p, bool decay) {
            auto& mv = moments[name];
            if (mv.first.size() == 0) {
                mv.first = Mat<S>::Zero(p.rows(), p.cols());
                mv.second = Mat<S>::Zero(p.rows(), p.cols());
            }
            Mat<S>& m = mv.first;
            Mat<S>& v = mv.second;
            m = static_cast<S>(beta1) * m + static_cast<S>(1.0 - beta1) * p.g;
            v = static_cast<S>(beta2) * v.array().matrix() +
                static_cast<S>(1.0 - beta2) * p.g.cwiseProduct(p.g);
            if (decay && weight_decay > 0.0) {
                p.v *= static_cast<S>(1.0 - lr * weight_decay);
            }
            p.v.array() -= static_cast<S>(lr) * (m.array() / static_cast<S>(bc1)) /
                           ((v.array() / static_cast<S>(bc2)).sqrt() + static_cast<S>(eps));
        });
    }
};

}  // namespace memmc
