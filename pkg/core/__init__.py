# Core modules for LiftGuard
