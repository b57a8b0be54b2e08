// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedmn/decision.hpp"
#include "fedmn/pool.hpp"

namespace fedmn {

struct TemperatureSchedule {
    double tau_start = 1.0;
    double tau_end = 0.1;
    int total_rounds = 150;
};

/// Exponential decay from tau_start at round 1 to tau_end at round T.
/// Throws ConfigError on an out-of-range round or a bad schedule.
double temperature(int round, const TemperatureSchedule& s);

/// Mean over samples of head([fx(x_i), fy(y_i)]) with the concatenated
/// embedding L2-normalized per sample before the head. Output is 1 x
/// path_count on the tape. Throws DataError on an empty dataset.
Var joint_embedding_var(Tape& t, const Matrix& x, const Matrix& y_onehot, Hypernet& h);

/// sigmoid(joint_embedding); entries strictly in (0,1).
Var routing_probs_var(Tape& t, const Matrix& x, const Matrix& y_onehot, Hypernet& h);

/// Plain-value versions of the above (private tape).
Vector joint_embedding(const Matrix& x, const Matrix& y_onehot, Hypernet& h);
Vector routing_probs(const Matrix& x, const Matrix& y_onehot, Hypernet& h);

/// n independent draws in the open interval (0,1).
Vector draw_epsilon(Eigen::Index n, Rng& rng);

/// Binary concrete sample: v_i = sigmoid((logit(eps_i) + logit(pi_i)) / tau).
/// Plain-value version; result is a relaxed decision.
DecisionVector sample_decision(const Vector& probs, double tau, const Vector& eps);

/// Graph version of sample_decision over a 1 x path_count probability row.
Var sample_decision_var(Var probs_row, const Vector& eps, double tau);

/// Concrete sample straight from pre-sigmoid logits: numerically equal to
/// sample_decision on sigmoid(logits) but avoids the logit(sigmoid(g))
/// round trip, which overflows for |g| beyond ~36.
Var sample_from_logits_var(Var logits_row, const Vector& eps, double tau);

}  // namespace fedmn
