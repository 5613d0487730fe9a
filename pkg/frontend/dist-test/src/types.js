// Wire types mirrored from the service's canonical JSON (snake_case).
export {};
