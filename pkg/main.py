from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
import uvicorn
import logging
from dotenv import load_dotenv

from routers import physics, runs
from utils.constants import TOOLKIT_VERSION

load_dotenv()

# Configure logging to show in terminal
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)

app = FastAPI(
    title="omckit API",
    description="Cavity-optomechanics thermometry: forward models, synthetic spectra and fits",
    version=TOOLKIT_VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:5173"],  # Local development
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(physics.router, prefix="/api/physics", tags=["physics"])
app.include_router(runs.router, prefix="/api/runs", tags=["runs"])

@app.get("/")
async def root():
    return {"message": "omckit API is running!"}

@app.get("/health")
async def health_check():
    return {"status": "healthy", "version": TOOLKIT_VERSION}

if __name__ == "__main__":
    uvicorn.run("main:app", host="0.0.0.0", port=8000, reload=True)
