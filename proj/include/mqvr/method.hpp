#pragma once

#include <string>
#include <string_view>

namespace mqvr {

/// Multi-query scoring methods. SA and RA are post-hoc; the rest combine query features.
enum class Method { SA, RA, MF, TSWF, LGWF, CGWF };

std::string_view to_string(Method m);
/// Accepts "sa", "ra", "mf", "tswf"/"ts-wf", "lgwf"/"lg-wf", "cgwf"/"cg-wf" in any case.
Method parse_method(std::string_view s);

/// Feature-combination methods (MF, TS-WF, LG-WF, CG-WF) can be trained.
constexpr bool is_trainable(Method m) noexcept { return m != Method::SA && m != Method::RA; }
/// Methods that produce a weight vector over the bundle.
constexpr bool is_weighting(Method m) noexcept {
  return m == Method::TSWF || m == Method::LGWF || m == Method::CGWF;
}
/// Methods whose weights come from a learned network.
constexpr bool needs_weight_network(Method m) noexcept {
  return m == Method::LGWF || m == Method::CGWF;
}

}  // namespace mqvr
