extern "C" { int hpalf_abi_placeholder(void); int hpalf_abi_placeholder(void) { return 1; } }
