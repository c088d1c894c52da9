#include "clip2scene/cli.hpp"

int main(int argc, char **argv) { return clip2scene::cli::run(argc, argv); }
