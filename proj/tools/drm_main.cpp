#include "drm/cli.hpp"

int main(int argc, char** argv) { return drm::cli::dispatch(argc, argv); }
