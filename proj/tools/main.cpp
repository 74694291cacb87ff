#include "stylesplat/cli.hpp"

int main(int argc, char** argv) { return stylesplat::dispatch({argv + 1, argv + argc}); }
