#include <iostream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "compose/cli.hpp"

int main(int argc, char** argv) {
  // stdout carries results only
  spdlog::set_default_logger(spdlog::stderr_color_mt("compose"));
  return compose::cli::run({argv, argv + argc}, std::cout, std::cerr);
}
