#include "ofal/cli.hpp"

int main(int argc, char** argv) { return ofal::dispatch(argc, argv); }
