// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace psyadapter::stats {

double mean(std::span<const double> x);
/// Population standard deviation (divides by n).
double pstdev(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
/// 1-based ranks, ties receive the average of the ranks they span.
std::vector<double> ranks(std::span<const double> x);
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace psyadapter::stats
