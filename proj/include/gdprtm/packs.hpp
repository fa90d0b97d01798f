#pragma once

#include <span>
#include <string_view>

namespace gdprtm {

struct BundledPack {
  std::string_view name;
  std::string_view text;
};

// Rule packs compiled into the binary, in default load order.
std::span<const BundledPack> bundled_packs();
const BundledPack* find_bundled_pack(std::string_view name);

}  // namespace gdprtm
