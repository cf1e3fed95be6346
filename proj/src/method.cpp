#include "mqvr/method.hpp"

#include <algorithm>
#include <cctype>

#include "mqvr/errors.hpp"

namespace mqvr {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::SA: return "SA";
    case Method::RA: return "RA";
    case Method::MF: return "MF";
    case Method::TSWF: return "TSWF";
    case Method::LGWF: return "LGWF";
    case Method::CGWF: return "CGWF";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  std::string key;
  for (char c : s) {
    if (c == '-' || c == '_') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "sa") return Method::SA;
  if (key == "ra") return Method::RA;
  if (key == "mf") return Method::MF;
  if (key == "tswf") return Method::TSWF;
  if (key == "lgwf") return Method::LGWF;
  if (key == "cgwf") return Method::CGWF;
  throw ConfigError("unknown method '" + std::string(s) +
                    "' (expected one of sa, ra, mf, tswf, lgwf, cgwf)");
}

}  // namespace mqvr
