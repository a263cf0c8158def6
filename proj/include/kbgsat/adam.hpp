#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "kbgsat/errors.hpp"
#include "kbgsat/tensor.hpp"

namespace kbgsat {

struct AdamOptions {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are zero before the first step and are
/// bound to parameter positions, so the parameter list must keep its order.
template <typename Scalar>
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    const AdamOptions& options() const { return options_; }
    std::int64_t steps() const { return t_; }

    /// Applies one update from each parameter's grad(). A non-finite
    /// gradient aborts the whole step before anything is modified.
    void step(const std::vector<Parameter<Scalar>*>& params) {
        for (const auto* p : params)
            if (!p->grad().allFinite()) throw NumericError("non-finite gradient in parameter " + p->name());
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.push_back(Matrix<Scalar>::Zero(p->value().rows(), p->value().cols()));
                v_.push_back(Matrix<Scalar>::Zero(p->value().rows(), p->value().cols()));
            }
        }
        if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
        ++t_;
        const double b1 = options_.beta1, b2 = options_.beta2;
        const Scalar c1 = Scalar(1.0 - std::pow(b1, static_cast<double>(t_)));
        const Scalar c2 = Scalar(1.0 - std::pow(b2, static_cast<double>(t_)));
        const Scalar lr = Scalar(options_.lr), eps = Scalar(options_.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& g = params[i]->grad();
            m_[i] = Scalar(b1) * m_[i] + Scalar(1 - b1) * g;
            v_[i] = Scalar(b2) * v_[i] + Scalar(1 - b2) * g.cwiseProduct(g);
            params[i]->value().array() -=
                lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
        }
    }

private:
    AdamOptions options_;
    std::int64_t t_ = 0;
    std::vector<Matrix<Scalar>> m_;
    std::vector<Matrix<Scalar>> v_;
};

}  // namespace kbgsat
