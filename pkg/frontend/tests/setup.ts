// Keep main.ts from auto-mounting when imported by tests.
(window as Window & { __GROOV_NO_AUTOSTART__?: boolean }).__GROOV_NO_AUTOSTART__ = true;
