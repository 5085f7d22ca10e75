#pragma once

namespace koa {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace koa
