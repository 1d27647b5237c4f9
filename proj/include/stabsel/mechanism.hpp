#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "stabsel/selection.hpp"

namespace stabsel {

enum class MechanismKind { argmin, laplace, exponential, minse, ada_minse };

inline std::string_view to_string(MechanismKind kind) {
  switch (kind) {
    case MechanismKind::argmin: return "argmin";
    case MechanismKind::laplace: return "laplace";
    case MechanismKind::exponential: return "exponential";
    case MechanismKind::minse: return "minse";
    case MechanismKind::ada_minse: return "ada_minse";
  }
  return "?";
}

inline MechanismKind parse_mechanism(std::string_view name) {
  if (name == "argmin") return MechanismKind::argmin;
  if (name == "laplace") return MechanismKind::laplace;
  if (name == "exponential") return MechanismKind::exponential;
  if (name == "minse") return MechanismKind::minse;
  if (name == "ada_minse") return MechanismKind::ada_minse;
  throw InvalidArgument("mechanism: unknown mechanism '" + std::string(name) + "'");
}

/// A selection rule together with its parameters. The prior defaults to
/// uniform when absent.
struct MechanismConfig {
  MechanismKind kind = MechanismKind::minse;
  double eta = 0.0;
  double tau = 0.0;
  double alpha = 0.1;
  double alpha_prime = 0.05;
  double scale = 1.0;
  std::optional<Prior> prior;

  Prior prior_for(std::size_t k) const {
    if (!prior) return Prior::uniform(k);
    detail::require(prior->size() == k, "prior: length must match the number of sizes");
    return *prior;
  }
};

/// Selection probabilities at one size profile. The Laplace mechanism has no
/// closed form and yields nullopt; argmin yields a point mass.
inline std::optional<SelectionDistribution> selection_distribution(const MechanismConfig& cfg,
                                                                   std::span<const double> sizes) {
  SizeProfile xi{{sizes.begin(), sizes.end()}, cfg.scale};
  switch (cfg.kind) {
    case MechanismKind::argmin: {
      std::vector<double> p(sizes.size(), 0.0);
      p[argmin_select(xi)] = 1.0;
      return SelectionDistribution{std::move(p), {static_cast<double>(sizes.size()), 0.0}};
    }
    case MechanismKind::laplace: return std::nullopt;
    case MechanismKind::exponential: return exponential_select(xi, cfg.eta);
    case MechanismKind::minse: return minse(xi, cfg.prior_for(sizes.size()), cfg.eta, cfg.tau);
    case MechanismKind::ada_minse: return ada_minse(xi, cfg.prior_for(sizes.size()), cfg.alpha, cfg.alpha_prime);
  }
  return std::nullopt;
}

inline std::size_t select_index(const MechanismConfig& cfg, std::span<const double> sizes, Rng& rng) {
  if (cfg.kind == MechanismKind::laplace) {
    return laplace_select(SizeProfile{{sizes.begin(), sizes.end()}, cfg.scale}, cfg.eta, rng);
  }
  if (cfg.kind == MechanismKind::argmin) return argmin_select(SizeProfile{{sizes.begin(), sizes.end()}, cfg.scale});
  return sample_selection(*selection_distribution(cfg, sizes), rng);
}

/// Stability level (eta) the mechanism guarantees against its reference:
/// Laplace eta, exponential 2*eta, MinSE eta.
inline double certified_eta(const MechanismConfig& cfg) {
  switch (cfg.kind) {
    case MechanismKind::exponential: return 2.0 * cfg.eta;
    default: return cfg.eta;
  }
}

}  // namespace stabsel
