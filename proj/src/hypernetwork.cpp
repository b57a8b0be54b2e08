// SPDX-License-Identifier: Apache-2.0
#include "fedmn/hypernetwork.hpp"

#include "fedmn/modular_network.hpp"

#include <cmath>
#include <limits>

namespace fedmn {

double temperature(int round, const TemperatureSchedule& s) {
    if (!(s.tau_start > 0.0) || !(s.tau_end > 0.0))
        throw ConfigError("temperature: tau values must be positive");
    if (s.tau_end > s.tau_start)
        throw ConfigError("temperature: tau_end must not exceed tau_start");
    if (s.total_rounds < 1) throw ConfigError("temperature: total_rounds must be >= 1");
    if (round < 1 || round > s.total_rounds)
        throw ConfigError("temperature: round " + std::to_string(round) + " outside [1, " +
                          std::to_string(s.total_rounds) + "]");
    if (round == s.total_rounds) return s.tau_end;
    if (round == 1) return s.tau_start;
    const double frac = static_cast<double>(round - 1) / static_cast<double>(s.total_rounds - 1);
    return s.tau_start * std::pow(s.tau_end / s.tau_start, frac);
}

Var joint_embedding_var(Tape& t, const Matrix& x, const Matrix& y_onehot, Hypernet& h) {
    if (x.rows() == 0) throw DataError("joint_embedding: empty dataset");
    if (x.rows() != y_onehot.rows())
        throw ShapeError("joint_embedding: " + shape_str(x) + " features vs " +
                         shape_str(y_onehot) + " labels");
    Var ex = block_forward(t, h.fx, t.constant(x));
    Var ey = block_forward(t, h.fy, t.constant(y_onehot));
    Var joint = row_l2_normalize(concat_cols(ex, ey));
    return mean_rows(block_forward(t, h.head, joint));
}

Var routing_probs_var(Tape& t, const Matrix& x, const Matrix& y_onehot, Hypernet& h) {
    return sigmoid(joint_embedding_var(t, x, y_onehot, h));
}

Vector joint_embedding(const Matrix& x, const Matrix& y_onehot, Hypernet& h) {
    Tape t;
    return joint_embedding_var(t, x, y_onehot, h).value().row(0).transpose();
}

Vector routing_probs(const Matrix& x, const Matrix& y_onehot, Hypernet& h) {
    Tape t;
    Vector p = routing_probs_var(t, x, y_onehot, h).value().row(0).transpose();
    // sigmoid saturates to exactly 0/1 in double once |logit| > ~37; pin the
    // result to the open interval so downstream logit() stays finite
    const double lo = std::numeric_limits<double>::min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return p.cwiseMax(lo).cwiseMin(hi);
}

Vector draw_epsilon(Eigen::Index n, Rng& rng) {
    Vector eps(n);
    for (Eigen::Index i = 0; i < n; ++i) eps(i) = rng.uniform_open();
    return eps;
}

namespace {

void check_sample_args(Eigen::Index probs_len, const Vector& eps, double tau) {
    if (!(tau > 0.0))
        throw ConfigError("sample_decision: tau must be positive, got " + std::to_string(tau));
    if (eps.size() != probs_len)
        throw ShapeError("sample_decision: " + std::to_string(eps.size()) + " noise draws for " +
                         std::to_string(probs_len) + " probabilities");
    if ((eps.array() <= 0.0).any() || (eps.array() >= 1.0).any())
        throw DataError("sample_decision: noise draws must lie in (0,1)");
}

}  // namespace

DecisionVector sample_decision(const Vector& probs, double tau, const Vector& eps) {
    check_sample_args(probs.size(), eps, tau);
    if ((probs.array() <= 0.0).any() || (probs.array() >= 1.0).any())
        throw DataError("sample_decision: probabilities must lie in (0,1)");
    DecisionVector v;
    v.values = Vector(probs.size());
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        const double noise = std::log(eps(i)) - std::log(1.0 - eps(i));
        const double shift = std::log(probs(i) / (1.0 - probs(i)));
        v.values(i) = 1.0 / (1.0 + std::exp(-(noise + shift) / tau));
    }
    v.hard = false;
    return v;
}

Var sample_decision_var(Var probs_row, const Vector& eps, double tau) {
    check_sample_args(probs_row.cols(), eps, tau);
    Matrix noise(1, eps.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i)
        noise(0, i) = std::log(eps(i)) - std::log(1.0 - eps(i));
    return sigmoid(scale(add_const(logit(probs_row), noise), 1.0 / tau));
}

Var sample_from_logits_var(Var logits_row, const Vector& eps, double tau) {
    check_sample_args(logits_row.cols(), eps, tau);
    Matrix noise(1, eps.size());
    for (Eigen::Index i = 0; i < eps.size(); ++i)
        noise(0, i) = std::log(eps(i)) - std::log(1.0 - eps(i));
    return sigmoid(scale(add_const(logits_row, noise), 1.0 / tau));
}

}  // namespace fedmn
