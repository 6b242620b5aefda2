# Test package for LiftGuard
