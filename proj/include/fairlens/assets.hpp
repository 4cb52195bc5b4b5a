#pragma once

#include <string_view>

namespace fairlens::assets {

// Contents of a file from data/ compiled into the library, or an empty view
// when no asset of that name exists.
std::string_view raw(std::string_view name);

}  // namespace fairlens::assets
